"""Command-line runner: ``relgan train | gradcheck | losstable | metrics``.

Exit codes: 0 success, 1 configuration error, 2 numeric failure (NaN abort),
3 check failure.

Experiment files are plain ``key = value`` lines; ``#`` starts a comment.
Keys are the :class:`~relgan.trainer.TrainConfig` fields plus ``out``.
``loss`` and ``seed`` are required.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import gradcheck
from .autodiff import stable_sigmoid
from .data import DATASETS, make_rng, mixture, read_samples_csv, sample_real
from .losses import LOSS_NAMES, CriticBatch, named_loss
from .metrics import evaluate
from .trainer import STREAM_REF, TrainConfig, TrainingAborted, train

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3
OUT_ENV = "RELGAN_OUT"

# built-in losstable scenarios: (label, real critic, mean fake critic)
SCENARIOS = [
    ("real looks real, fakes look fake", 8.0, -5.0),
    ("real looks real, fakes look similarly real", 8.0, 7.0),
    ("real looks fake, fakes look more fake", -3.0, -5.0),
]


class ConfigError(ValueError):
    pass


# -- config files -------------------------------------------------------------

@dataclass
class Experiment:
    config: TrainConfig
    out: str | None = None
    source: str = "<config>"


def _parse_value(key: str, raw: str, kind):
    kind = str(kind)
    if "tuple" in kind:
        return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    if "bool" in kind:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> Experiment:
    """Parse an experiment file; errors carry ``source:line``."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values: dict = {}
    out = None
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set on line {seen[key]})")
        seen[key] = lineno
        if key == "out":
            out = raw
            continue
        if key not in types:
            raise ConfigError(f"{where}: unknown key {key!r}; valid keys: {', '.join(sorted(types) + ['out'])}")
        try:
            values[key] = _parse_value(key, raw, types[key])
        except ValueError as exc:
            raise ConfigError(f"{where}: bad value for {key}: {exc}") from None
        if key == "loss" and raw not in LOSS_NAMES:
            raise ConfigError(f"{where}: unknown loss {raw!r}; valid names: {', '.join(LOSS_NAMES)}")
        if key == "dataset" and raw not in DATASETS:
            raise ConfigError(f"{where}: unknown dataset {raw!r}; valid: {', '.join(DATASETS)}")
    for required in ("loss", "seed"):
        if required not in values:
            raise ConfigError(f"{source}: missing required key {required!r}")
    try:
        config = TrainConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return Experiment(config, out, source)


def load_config(path, seed: int | None = None) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    exp = parse_config(text, str(path))
    if seed is not None:
        exp.config.seed = seed
    return exp


# -- train --------------------------------------------------------------------

def scatter_svg(real: np.ndarray, generated: np.ndarray, size: int = 480) -> str:
    """Flat scatter on a fixed [-3, 3]^2 viewport: real gray, generated blue."""
    def px(pts):
        pts = np.clip(pts, -3, 3)
        return (pts[:, 0] + 3) / 6 * size, (3 - pts[:, 1]) / 6 * size

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for pts, color in ((real, "#999999"), (generated, "#1f77b4")):
        xs, ys = px(np.asarray(pts, dtype=np.float64))
        parts.append(f'<g fill="{color}" fill-opacity="0.5">')
        parts.extend(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="1.5"/>' for x, y in zip(xs, ys))
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def run_directory(exp: Experiment, out_flag: str | None, n_runs: int) -> Path:
    """--out beats the file's ``out`` key, which beats $RELGAN_OUT, then ./runs.

    With several configs each run gets a subdirectory named after its file.
    """
    root = out_flag or exp.out or os.environ.get(OUT_ENV) or "runs"
    root = Path(root)
    if n_runs > 1 or not (out_flag or exp.out):
        root = root / f"{Path(exp.source).stem}-seed{exp.config.seed}"
    return root


def _train_one(exp: Experiment, out_dir: Path) -> tuple[int, str]:
    try:
        result = train(exp.config, out_dir=out_dir)
    except TrainingAborted as exc:
        return EXIT_NUMERIC, f"{exp.source}: training aborted at {exc}"
    cfg = exp.config
    samples_path = out_dir / f"samples_{cfg.iterations}.csv"
    reference = sample_real(mixture(cfg.dataset), 2000, make_rng(cfg.seed, STREAM_REF))
    (out_dir / "scatter.svg").write_text(scatter_svg(reference, read_samples_csv(samples_path)[:2000]))
    best = result.log.best()
    return EXIT_OK, (f"{exp.source}: {cfg.loss} seed={cfg.seed} -> {out_dir} "
                     f"(best iter {best.iter}: jsd={best.metrics.jsd:.4f} modes={best.metrics.modes})")


def cmd_train(args) -> int:
    if not args.config:
        print("train: at least one --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        exps = [load_config(p, args.seed) for p in args.config]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    dirs = [run_directory(e, args.out, len(exps)) for e in exps]
    if len(set(dirs)) != len(dirs):
        print("config error: two runs would share an output directory", file=sys.stderr)
        return EXIT_CONFIG
    if args.jobs > 1 and len(exps) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            outcomes = list(pool.map(_train_one, exps, dirs))
    else:
        outcomes = [_train_one(e, d) for e, d in zip(exps, dirs)]
    code = EXIT_OK
    for status, message in outcomes:
        print(message, file=sys.stderr if status else sys.stdout)
        code = max(code, status)
    return code


# -- gradcheck ----------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(args.seed or 0)
    print(gradcheck.format_report(results))
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) over tolerance", file=sys.stderr)
        return EXIT_CHECK
    print("all checks passed")
    return EXIT_OK


# -- losstable ----------------------------------------------------------------

@dataclass(frozen=True)
class LossTable:
    c_real: np.ndarray
    c_fake: np.ndarray
    abs_real: np.ndarray      # sigmoid(C(x_r))
    rel_real: np.ndarray      # sigmoid(C(x_r) - mean C(x_f))
    abs_fake: np.ndarray
    rel_fake: np.ndarray      # sigmoid(C(x_f) - mean C(x_r))
    losses: dict              # name -> (L_D, L_G), penalty excluded


def losstable_rows(c_real, c_fake) -> LossTable:
    cr = np.atleast_1d(np.asarray(c_real, dtype=np.float64))
    cf = np.atleast_1d(np.asarray(c_fake, dtype=np.float64))
    if cr.size == 0 or cf.size == 0:
        raise ValueError("need at least one real and one fake critic value")
    losses = {}
    if cr.size == cf.size:
        cb = CriticBatch(cr, cf)
        losses = {n: tuple(t.item() for t in named_loss(n).losses(cb)) for n in LOSS_NAMES}
    return LossTable(cr, cf, stable_sigmoid(cr), stable_sigmoid(cr - cf.mean()),
                     stable_sigmoid(cf), stable_sigmoid(cf - cr.mean()), losses)


def format_losstable(t: LossTable, title: str | None = None) -> str:
    lines = [title] if title else []
    lines.append(f"  C(x_r) = {_fmt_list(t.c_real)}   mean C(x_f) = {t.c_fake.mean():g}")
    lines.append(f"  absolute P(x_r real)            = {_fmt_list(t.abs_real, '.2f')}")
    lines.append(f"  relative P(x_r real | mean C_f) = {_fmt_list(t.rel_real, '.2f')}")
    if t.losses:
        lines.append(f"  {'loss':<11} {'L_D':>12} {'L_G':>12}")
        for name, (ld, lg) in t.losses.items():
            note = "  (penalty excluded)" if named_loss(name).gp else ""
            lines.append(f"  {name:<11} {ld:12.6f} {lg:12.6f}{note}")
    else:
        lines.append("  (loss values need as many fake critics as real ones)")
    return "\n".join(lines)


def _fmt_list(values, spec="g"):
    return ", ".join(format(float(v), spec) for v in values)


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.replace(" ", "").split(",") if v]


def cmd_losstable(args) -> int:
    if args.real is None and args.fake is None:
        blocks = [format_losstable(losstable_rows([r], [f]), label) for label, r, f in SCENARIOS]
        print("\n\n".join(blocks))
        return EXIT_OK
    try:
        table = losstable_rows(_float_list(args.real or ""), _float_list(args.fake or ""))
    except ValueError as exc:
        print(f"losstable: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(format_losstable(table))
    return EXIT_OK


# -- metrics ------------------------------------------------------------------

def cmd_metrics(args) -> int:
    try:
        samples = read_samples_csv(args.samples)
        spec = mixture(args.dataset)
        if args.reference:
            reference = read_samples_csv(args.reference)
        else:
            reference = sample_real(spec, 10_000, make_rng(args.seed or 0, STREAM_REF))
    except (OSError, ValueError, KeyError) as exc:
        print(f"metrics: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    r = evaluate(samples, reference, spec)
    print("jsd,modes,hq_frac,frechet")
    print(f"{r.jsd:.9g},{r.modes},{r.hq_frac:.9g},{r.frechet:.9g}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one or more experiment files")
    p.add_argument("--config", action="append", default=[], metavar="PATH")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--jobs", type=int, default=1, metavar="N")
    p.add_argument("--seed", type=int, metavar="S", help="overrides the seed in every file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gradcheck", help="verify gradients of every named loss")
    p.add_argument("--seed", type=int, metavar="S")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("losstable", help="absolute vs relative probabilities and loss values")
    p.add_argument("--real", metavar="C1,C2,...")
    p.add_argument("--fake", metavar="C1,C2,...")
    p.set_defaults(func=cmd_losstable)

    p = sub.add_parser("metrics", help="recompute metrics for a samples CSV")
    p.add_argument("samples", metavar="SAMPLES_CSV")
    p.add_argument("--dataset", default="ring8", choices=DATASETS)
    p.add_argument("--reference", metavar="CSV")
    p.add_argument("--seed", type=int, metavar="S")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
