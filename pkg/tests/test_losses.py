import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdcl import losses
from cdcl import numerics as nx
from cdcl.losses import LossConfig
from cdcl.numerics import Tensor

from conftest import dcl_oracle


def test_config_validation_names_field():
    with pytest.raises(ValueError, match="mode"):
        LossConfig("FOO")
    for field in ("temperature", "gamma", "eps"):
        with pytest.raises(ValueError, match=field):
            LossConfig(**{field: 0.0})
    with pytest.raises(ValueError, match="weight_decay"):
        LossConfig(weight_decay=-1)


def test_ccl_examples(rng):
    assert losses.ccl([1.0, 2.0], [1.0, 2.0]).item() == 0.0
    assert losses.ccl([1.0, 0.0], [0.0, 1.0]).item() == 2.0
    a, b = rng.normal(size=7), rng.normal(size=7)
    ref = sum((x - y) ** 2 for x, y in zip(a, b))
    assert abs(losses.ccl(a, b).item() - ref) < 1e-12
    with pytest.raises(ValueError):
        losses.ccl(np.ones(2), np.ones(3))


def test_h_examples():
    a = np.array([0.3, -1.2, 2.0])
    assert losses.h(a, a).item() == pytest.approx(22026.4658, abs=1e-4)
    assert losses.h([1.0, 0.0], [0.0, 3.0]).item() == pytest.approx(1.0, abs=1e-15)
    assert abs(losses.h(2 * a, 5 * a).item() - losses.h(a, a).item()) < 1e-9


def test_h_zero_vector_uses_floor():
    out = losses.h(np.zeros(3), np.ones(3)).item()
    assert out == 1.0


def test_dcl_symmetric_points():
    O = np.array([1.0, 2.0, 3.0])
    assert losses.dcl(O, np.tile(O, (6, 1))).item() == pytest.approx(6 * math.log(6), abs=1e-12)
    assert losses.constant_baseline(6) == pytest.approx(10.750557, abs=1e-6)
    # O orthogonal to both views, views orthogonal to each other
    O = np.array([1.0, 0.0, 0.0])
    views = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 2.0]])
    assert losses.dcl(O, views).item() == pytest.approx(2 * math.log(2), abs=1e-12)


def test_dcl_rejects_single_view():
    with pytest.raises(ValueError):
        losses.dcl(np.ones(3), np.ones((1, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_dcl_matches_formula_oracle(seed):
    rng = np.random.default_rng(seed)
    K, d = int(rng.integers(2, 7)), int(rng.integers(2, 6))
    O, views = rng.normal(size=d), rng.normal(size=(K, d))
    tau = float(rng.uniform(0.05, 1.0))
    assert abs(losses.dcl(O, views, tau).item() - dcl_oracle(O, views, tau)) < 1e-10


def test_dcl_batched_equals_per_sample(rng):
    O, views = rng.normal(size=(4, 3)), rng.normal(size=(4, 5, 3))
    batched = losses.dcl(O, views).data
    for i in range(4):
        assert batched[i] == pytest.approx(losses.dcl(O[i], views[i]).item(), abs=1e-12)


def test_cncl_examples(rng):
    G = np.array([1.0, -1.0])
    assert losses.cncl(np.tile(G, (3, 1)), G).item() == 0.0
    views = np.array([G + [1.0, 0.0], G + [0.0, 2.0]])
    assert losses.cncl(views, G).item() == 5.0
    views, G = rng.normal(size=(4, 3)), rng.normal(size=3)
    ref = sum(sum((views[k, i] - G[i]) ** 2 for i in range(3)) for k in range(4))
    assert abs(losses.cncl(views, G).item() - ref) < 1e-12


def test_cdcl_is_sum_of_parts(rng):
    O, views, G = rng.normal(size=4), rng.normal(size=(6, 4)), rng.normal(size=4)
    total = losses.cdcl(O, views, G).item()
    parts = losses.cncl(views, G).item() + losses.dcl(O, views).item()
    assert abs(total - parts) < 1e-12
    c = rng.normal(size=4)
    assert losses.cdcl(c, np.tile(c, (6, 1)), c).item() == pytest.approx(10.750557, abs=1e-6)


def test_occ_examples(rng):
    c = np.array([1.0, 2.0])
    assert losses.occ(np.tile(c, (5, 1)), c).item() == 0.0
    assert losses.occ((c + [2.0, 0.0])[None], c).item() == 4.0
    ws = [Tensor(rng.normal(size=(3, 2))), Tensor(rng.normal(size=4))]
    lat = rng.normal(size=(5, 2))
    base = losses.occ(lat, c).item()
    ref = sum(float(x) ** 2 for w in ws for x in w.data.reshape(-1))
    assert losses.occ(lat, c, 0.01, ws).item() - base == pytest.approx(0.01 * ref, abs=1e-12)


def test_var_reg_examples(rng):
    const = np.ones((6, 3)) * 2.5
    assert losses.var_reg(const).item() == pytest.approx(1 - math.sqrt(1e-4), abs=1e-15)
    wide = rng.normal(size=(50, 4))
    wide = (wide - wide.mean(0)) / wide.std(0, ddof=1) * 1.5
    assert losses.var_reg(wide).item() == 0.0
    with pytest.raises(ValueError):
        losses.var_reg(np.ones((1, 3)))


@pytest.mark.parametrize("seed", range(10))
def test_var_reg_two_pass_oracle(seed):
    rng = np.random.default_rng(seed)
    B, d = int(rng.integers(2, 9)), int(rng.integers(1, 6))
    z = rng.normal(size=(B, d)) * rng.uniform(0.1, 2.0, size=d)
    total = 0.0
    for j in range(d):
        col = [z[b, j] for b in range(B)]
        mean = sum(col) / B
        var = sum((x - mean) ** 2 for x in col) / (B - 1)
        total += max(0.0, 1.0 - math.sqrt(var + 1e-4))
    assert abs(losses.var_reg(z).item() - total / d) < 1e-10


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_losses_nonnegative_and_dcl_scale_invariant(seed):
    rng = np.random.default_rng(seed)
    K, d = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    O, views, G = rng.normal(size=d), rng.normal(size=(K, d)), rng.normal(size=d)
    assert losses.ccl(O, G).item() >= 0
    assert losses.cncl(views, G).item() >= 0
    assert losses.dcl(O, views).item() >= 0
    assert losses.var_reg(rng.normal(size=(3, d))).item() >= 0
    alpha = rng.uniform(0.01, 100)
    betas = rng.uniform(0.01, 100, size=(K, 1))
    assert abs(losses.dcl(alpha * O, betas * views).item() - losses.dcl(O, views).item()) < 1e-9


def test_loss_gradients():
    rng = np.random.default_rng(5)
    O = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    views = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    G = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    for fn in (
        lambda: losses.ccl(O, G).mean(),
        lambda: losses.dcl(O, views).mean(),
        lambda: losses.cncl(views, G).mean(),
        lambda: losses.cdcl(O, views, G).mean(),
        lambda: losses.occ(O, np.ones(4), 0.1, [G]),
        lambda: losses.var_reg(O * 0.2) + losses.var_reg(G * 0.2),
    ):
        assert nx.finite_diff_check(fn, [O, views, G]) < 1e-4
