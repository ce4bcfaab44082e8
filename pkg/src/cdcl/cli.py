"""Command-line entry point: generate, train, score, evaluate, ablate, gradcheck.

Configs are flat ``key = value`` text files (``#`` starts a comment).  Exit
status is 0 on success, 1 on invalid input or config, 2 when a run aborts.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checks import GRADCHECK_LOSSES, gradcheck_table
from .data import (
    DataError,
    NormalizationStats,
    TimeSeries,
    WindowSpec,
    apply_normalizer,
    fit_normalizer,
    load_csv,
    make_windows,
    save_csv,
)
from .encoder import EncoderConfig
from .evaluation import DegenerateLabels, best_f1_search, score_series
from .losses import MODES, LossConfig
from .model import Detector
from .synthgen import ANOMALY_TYPES, SynthSpec, generate
from .trainer import TrainConfig, TrainingError, TrainReport, train

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"CDCLCKPT\n"


class ConfigError(ValueError):
    """Invalid config key or value; the message names the field."""


class CheckpointError(ValueError):
    """Unreadable checkpoint or unsupported format version."""


# -- flat config files --------------------------------------------------------


def read_flat(path) -> dict[str, str]:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}: line {n}: empty key")
        if key in out:
            raise ConfigError(f"{key}: given twice ({path}: line {n})")
        out[key] = value
    return out


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(v.strip()) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return str(value) if not isinstance(value, float) else repr(value)


@dataclass(frozen=True)
class RunConfig:
    train_path: str = ""
    test_path: str = ""
    out_dir: str = "."
    window_length: int = 30
    suspect_offset: int = 5
    stride: int = 1
    hidden_dim: int = 32
    block_count: int = 8
    kernel_set: tuple = (2, 3, 6, 7)
    dilation_base: int = 2
    n_transforms: int = 6
    mode: str = "CDCL"
    temperature: float = 0.1
    gamma: float = 1.0
    eps: float = 1e-4
    weight_decay: float = 0.0
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 10
    batch_size: int = 64
    val_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        # delegate range checks to the owning types; re-raise with the field name
        try:
            self.window_spec()
            self.encoder_config(1)
            self.loss_config()
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_transforms < 2 and self.mode in ("CDCL", "DCL"):
            raise ConfigError(f"n_transforms: must be >= 2 for mode {self.mode}, got {self.n_transforms}")

    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window_length, self.suspect_offset, self.stride)

    def encoder_config(self, in_channels: int) -> EncoderConfig:
        return EncoderConfig(
            in_channels, self.hidden_dim, self.block_count, self.kernel_set, self.dilation_base, self.seed
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(self.mode, self.temperature, self.gamma, self.eps, self.weight_decay)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            self.learning_rate, self.max_epochs, self.patience, self.batch_size, self.val_fraction, self.seed
        )

    def with_overrides(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.to_dict().items())

    @classmethod
    def from_dict(cls, raw: dict[str, str], require_paths=("train_path",)) -> "RunConfig":
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config key")
        values = {k: _coerce(k, v, getattr(defaults, k)) for k, v in raw.items()}
        cfg = cls(**values)
        for key in require_paths:
            path = getattr(cfg, key)
            if not path:
                raise ConfigError(f"{key}: required")
            if not Path(path).is_file():
                raise ConfigError(f"{key}: file {path!r} does not exist")
        return cfg

    @classmethod
    def load(cls, path, require_paths=("train_path",)) -> "RunConfig":
        raw = read_flat(path)
        # relative data paths resolve against the config file's directory
        base = Path(path).resolve().parent
        for key in ("train_path", "test_path", "out_dir"):
            if raw.get(key) and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
        return cls.from_dict(raw, require_paths)


def synth_spec_from_flat(raw: dict[str, str]) -> SynthSpec:
    """SynthSpec from flat keys; anomaly mix uses ``weight_<type>`` keys."""
    defaults = SynthSpec()
    kwargs, weights = {}, dict(defaults.weights)
    for key, value in raw.items():
        if key.startswith("weight_"):
            kind = key[len("weight_") :]
            if kind not in ANOMALY_TYPES:
                raise ConfigError(f"{key}: unknown anomaly type {kind!r}")
            weights[kind] = _coerce(key, value, 0.0)
        elif key in ("weights",) or not hasattr(defaults, key):
            raise ConfigError(f"{key}: unknown config key")
        else:
            kwargs[key] = _coerce(key, value, getattr(defaults, key))
    try:
        return SynthSpec(weights=weights, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- checkpoints --------------------------------------------------------------


def _report_summary(report: TrainReport | None) -> dict:
    if report is None:
        return {}
    # wall time is left out so identical runs give identical files
    return {
        "epochs": report.epochs,
        "best_epoch": report.best_epoch,
        "stopped_early": report.stopped_early,
        "final_train_loss": report.final_train_loss,
        "train_loss": report.train_loss,
        "val_loss": report.val_loss,
    }


def save_checkpoint(path, detector: Detector, config: RunConfig, stats: NormalizationStats, report=None) -> None:
    """Text header then raw little-endian float64 arrays.

    Layout: magic line, header byte count as a decimal line, JSON header,
    then the arrays back to back at the listed byte offsets.
    """
    arrays = dict(sorted(detector.state_arrays().items()))
    arrays["norm.minimum"] = stats.minimum
    arrays["norm.maximum"] = stats.maximum
    directory, offset = [], 0
    for name, a in arrays.items():
        a = np.asarray(a, dtype=np.float64)
        directory.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size * 8
    header = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "in_channels": detector.encoder.config.in_channels,
        "bias": detector.encoder.config.bias,
        "arrays": directory,
        "report": _report_summary(report),
    }
    blob = json.dumps(header, sort_keys=True, indent=1).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(f"{len(blob)}\n".encode("ascii"))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    rest = data[len(MAGIC) :]
    line, _, rest = rest.partition(b"\n")
    try:
        size = int(line)
        header = json.loads(rest[:size].decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} unsupported (expected {FORMAT_VERSION})"
        )
    payload = rest[size:]
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + count * 8 > len(payload):
            raise CheckpointError(f"{path}: array {entry['name']} runs past end of file")
        arrays[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(entry["shape"]).astype(np.float64)
    return header, arrays


def load_checkpoint(path) -> tuple[Detector, RunConfig, NormalizationStats, dict]:
    header, arrays = read_checkpoint(path)
    raw = header["config"]
    raw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    config = RunConfig(**raw)
    enc_cfg = dataclasses.replace(config.encoder_config(header["in_channels"]), bias=header["bias"])
    detector = Detector.build(enc_cfg, config.n_transforms, config.loss_config())
    detector.load_arrays(arrays)
    stats = NormalizationStats(arrays["norm.minimum"], arrays["norm.maximum"])
    return detector, config, stats, header


# -- pipeline -----------------------------------------------------------------


def fit(config: RunConfig, train_series: TimeSeries) -> tuple[Detector, NormalizationStats, TrainReport]:
    """Normalize, window and train one detector on ``train_series``."""
    stats = fit_normalizer(train_series)
    samples = make_windows(apply_normalizer(stats, train_series), config.window_spec())
    detector = Detector.build(config.encoder_config(train_series.channels), config.n_transforms, config.loss_config())
    detector, report = train(detector, samples, config.train_config())
    return detector, stats, report


def score(detector: Detector, stats: NormalizationStats, config: RunConfig, test: TimeSeries) -> np.ndarray:
    return score_series(detector, apply_normalizer(stats, test), config.window_spec()).scores


def run_experiment(config: RunConfig, train_series: TimeSeries, test: TimeSeries, adjust: bool = True) -> dict:
    """Train, score and evaluate; returns F1/AUC plus the trained pieces."""
    detector, stats, report = fit(config, train_series)
    scores = score(detector, stats, config, test)
    threshold, ev = best_f1_search(scores, test.labels, adjust)
    return {"detector": detector, "stats": stats, "report": report, "scores": scores, "eval": ev}


def _load_series(path) -> TimeSeries:
    with Path(path).open(encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    return load_csv(path, has_labels=bool(header) and header[-1].strip() == "label")


def report_text(report: TrainReport) -> str:
    lines = [
        f"epochs = {report.epochs}",
        f"best_epoch = {report.best_epoch}",
        f"stopped_early = {report.stopped_early}",
        f"final_train_loss = {report.final_train_loss!r}",
        f"wall_time = {report.wall_time:.3f}",
        "epoch,train_loss,val_loss",
    ]
    lines += [f"{i},{t!r},{v!r}" for i, (t, v) in enumerate(zip(report.train_loss, report.val_loss))]
    return "\n".join(lines) + "\n"


def write_scores(path, scores: np.ndarray) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["tick", "score"])
        writer.writerows([t, repr(float(s))] for t, s in enumerate(scores))


def read_scores(path) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["tick", "score"]:
        raise DataError(f"{path}: expected header 'tick,score'")
    try:
        ticks = [int(r[0]) for r in rows[1:]]
        values = np.array([float(r[1]) for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: malformed row ({exc})") from None
    if ticks != list(range(len(ticks))):
        raise DataError(f"{path}: ticks must run 0..T-1 in order")
    return values


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    spec = synth_spec_from_flat(read_flat(args.config)) if args.config else SynthSpec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    train_s, test_s = generate(spec)
    save_csv(train_s, out / "train.csv", with_labels=False)
    save_csv(test_s, out / "test.csv", with_labels=True)
    print(f"wrote {out / 'train.csv'} ({train_s.ticks} rows) and {out / 'test.csv'} ({test_s.ticks} rows)")
    return 0


def _run_config(args, require_paths=("train_path",)) -> RunConfig:
    config = RunConfig.load(args.config, require_paths)
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.out:
        kw["out_dir"] = args.out
    return config.with_overrides(**kw) if kw else config


def cmd_train(args) -> int:
    config = _run_config(args)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    detector, stats, report = fit(config, _load_series(config.train_path))
    save_checkpoint(out / "model.ckpt", detector, config, stats, report)
    (out / "train_report.txt").write_text(report_text(report), encoding="utf-8")
    print(f"trained {report.epochs} epochs (best {report.best_epoch}); checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_score(args) -> int:
    detector, config, stats, _ = load_checkpoint(args.checkpoint)
    scores = score(detector, stats, config, _load_series(args.test))
    out = Path(args.out or "scores.csv")
    if out.is_dir():
        out = out / "scores.csv"
    write_scores(out, scores)
    print(f"wrote {len(scores)} scores to {out}")
    return 0


def cmd_evaluate(args) -> int:
    scores = read_scores(args.scores)
    test = load_csv(args.test, has_labels=True)
    if len(scores) != test.ticks:
        raise DataError(f"{len(scores)} scores for {test.ticks} test ticks")
    _, ev = best_f1_search(scores, test.labels, args.adjust)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    ev.write(out / "eval_report.txt", out / "sweep.csv")
    ev.write_segments(out / "segments.csv")
    sys.stdout.write(ev.to_text())
    return 0


def cmd_ablate(args) -> int:
    config = _run_config(args, ("train_path", "test_path"))
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"modes: {m!r} is not one of {', '.join(MODES)}")
    train_s = _load_series(config.train_path)
    test = load_csv(config.test_path, has_labels=True)
    rows = []
    for m in modes:
        res = run_experiment(config.with_overrides(mode=m), train_s, test, args.adjust)
        rows.append((m, res["eval"].f1, res["eval"].roc_auc, res["report"].epochs))
    table = "mode,f1,roc_auc,epochs\n" + "".join(f"{m},{f:.6f},{a:.6f},{e}\n" for m, f, a, e in rows)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return 0


def cmd_gradcheck(args) -> int:
    seed = 0 if args.seed is None else args.seed
    rows = gradcheck_table(range(seed, seed + args.seeds))
    failed = False
    print("loss,worst_error,result")
    for name in GRADCHECK_LOSSES:
        worst = max(r.error for r in rows if r.loss == name)
        ok = all(r.passed for r in rows if r.loss == name)
        failed |= not ok
        print(f"{name},{worst:.3e},{'pass' if ok else 'FAIL'}")
    return 2 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdcl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required):
        p.add_argument("--config", required=config_required)
        p.add_argument("--out")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("generate", help="write synthetic train.csv/test.csv")
    common(p, False)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a detector and write a checkpoint")
    common(p, True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="per-tick anomaly scores for a test CSV")
    p.add_argument("checkpoint")
    p.add_argument("test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="best-F1 and ROC-AUC of a scores CSV")
    p.add_argument("scores")
    p.add_argument("test")
    p.add_argument("--out")
    p.add_argument("--adjust", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare several loss modes")
    common(p, True)
    p.add_argument("--modes", default=",".join(MODES))
    p.add_argument("--adjust", action=argparse.BooleanOptionalAction, default=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError, DegenerateLabels, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, FloatingPointError, RuntimeError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
