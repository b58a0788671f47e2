"""Command-line front end: ``outlierseq <subcommand> [options]``.

Configuration is a TOML file plus repeated ``--set key=value`` overrides.
Exit codes: 0 success, 1 runtime failure, 2 invalid invocation or input.
Errors are printed as a single line ``error: <field>: <reason>``.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .analytics import bound_kl_test, bound_mmd_test, exponent_ml, exponent_report
from .detectors import KL, ML, MMD, SequenceBatch, detect, parse_schedule
from .distributions import DistributionSpec, density_ratio_bounds, distribution_to_dict, parse_distribution
from .errors import ConfigInvalid, OutlierSeqError, UnboundedRatio
from .kl_estimator import estimate_kl_batch
from .mmd_estimator import GaussianKernel, mmd2_unbiased
from .montecarlo import ErrorCurve, ExperimentConfig, estimate_error_curve, fit_exponent

SUBCOMMANDS = ("estimate-kl", "estimate-mmd", "detect", "analyze", "simulate", "fit-exponent")

# key -> (default, description); the --help epilog is generated from this table.
CONFIG_KEYS: dict[str, tuple[Any, str]] = {
    "m": (5, "number of sequences M (>= 2)"),
    "n_grid": ([20, 40, 60, 80, 100], "strictly increasing sample sizes (each >= 2)"),
    "trials": (10000, "Monte Carlo trials per (detector, n) cell (>= 1)"),
    "seed": (20160320, "64-bit unsigned root seed"),
    "detectors": (["kl", "mmd"], "detectors to run: any of kl, mmd, ml"),
    "placement": ("uniform", "outlier index: 'uniform' or a fixed 0-based index"),
    "min_errors_for_fit": (10, "rows with fewer errors are excluded from exponent fits"),
    "gamma": (1.0, "Gaussian kernel bandwidth for MMD (> 0)"),
    "schedule": ("sqrt_n", "KL partition rule: sqrt_n, fixed_cells:<T>, fixed_points:<l>"),
    "clamp_cell_mass": (None, "floor for zero-mass KL cells; output is then not certified"),
    "pi": ({"kind": "gaussian", "mean": 0.0, "variance": 1.0}, "typical distribution"),
    "mu": ({"kind": "gaussian", "mean": 0.0, "variance": 2.0}, "outlier distribution"),
    "studies": (None, "optional list of {name, mu, n_grid?} tables sharing the other settings"),
}
STUDY_KEYS = {"name", "mu", "n_grid"}


class UsageError(Exception):
    """Invalid invocation; exits with status 2."""

    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError("argv", message.replace("\n", " "))


@dataclass
class Settings:
    """Validated configuration values shared by all subcommands."""

    raw: dict
    m: int
    n_grid: tuple[int, ...]
    trials: int
    seed: int
    detector_names: tuple[str, ...]
    placement: str | int
    min_errors_for_fit: int
    gamma: float
    schedule: object
    clamp_cell_mass: float | None
    pi: DistributionSpec
    mu: DistributionSpec
    studies: list[dict] = field(default_factory=list)

    @property
    def kernel(self) -> GaussianKernel:
        return GaussianKernel(self.gamma)

    def detector(self, name: str, mu: DistributionSpec | None = None):
        if name == "kl":
            return KL(self.schedule, self.clamp_cell_mass)
        if name == "mmd":
            return MMD(self.kernel)
        if name == "ml":
            return ML(mu if mu is not None else self.mu)
        raise ConfigInvalid("detectors", f"unknown detector {name!r}")

    def experiment(self, mu: DistributionSpec, n_grid: Sequence[int]) -> ExperimentConfig:
        return ExperimentConfig(
            m=self.m,
            n_grid=tuple(n_grid),
            trials=self.trials,
            pi=self.pi,
            mu=mu,
            detectors=tuple(self.detector(d, mu) for d in self.detector_names),
            seed=self.seed,
            placement=self.placement,
            min_errors_for_fit=self.min_errors_for_fit,
        )


@dataclass
class CliInvocation:
    subcommand: str
    settings: Settings
    config_path: Path | None = None
    overrides: list[str] = field(default_factory=list)
    output_path: Path | None = None
    output_dir: Path | None = None
    format: str = "json"
    input_path: str | None = None
    by_column: bool = False
    detector: str | None = None
    study: str | None = None


def _config_epilog() -> str:
    lines = ["config keys (TOML file via --config, or --set key=value):"]
    for key, (default, desc) in CONFIG_KEYS.items():
        shown = json.dumps(default)
        lines.append(f"  {key:<20} default {shown}  {desc}")
    lines.append("environment: OUTLIERSEQ_THREADS caps worker threads (0 = all cores)")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="outlierseq",
        description="Universal outlying-sequence detection for continuous observations.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, epilog=_config_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", type=Path, help="TOML configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (dotted keys reach into tables)")
        p.add_argument("--output", "-o", type=Path, help="write output here (atomically) instead of stdout")
        p.add_argument("--format", choices=("csv", "json"),
                       default="csv" if name == "simulate" else "json")
        p.add_argument("--clamp-cell-mass", type=float, metavar="DELTA",
                       help="floor zero-mass KL cells at DELTA (marks output non-certified)")
        if name in ("estimate-kl", "estimate-mmd", "detect", "fit-exponent"):
            p.add_argument("input", nargs="?", default="-", help="input file, '-' for stdin")
        if name == "detect":
            p.add_argument("--by-column", action="store_true", help="one sequence per CSV column")
            p.add_argument("--detector", choices=("kl", "mmd", "ml"), help="default: first configured detector")
        if name == "simulate":
            p.add_argument("--study", help="run only the named study")
            p.add_argument("--output-dir", type=Path,
                           help="write one file per study here (default for multi-study configs: ./<config stem>/)")
    return parser


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def _apply_override(cfg: dict, item: str) -> None:
    key, sep, value = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigInvalid("set", f"expected KEY=VALUE, got {item!r}")
    parts = key.split(".")
    if parts[0] not in CONFIG_KEYS:
        raise ConfigInvalid(key, "unknown key")
    target = cfg
    for part in parts[:-1]:
        nxt = target.get(part)
        if not isinstance(nxt, dict):
            raise ConfigInvalid(key, f"{part!r} is not a table")
        target = nxt
    target[parts[-1]] = _parse_value(value.strip())


def _int(cfg: dict, key: str, lo: int) -> int:
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise ConfigInvalid(key, f"must be an integer >= {lo}")
    return v


def _n_grid(value, key: str = "n_grid") -> tuple[int, ...]:
    if not isinstance(value, list) or not value:
        raise ConfigInvalid(key, "must be a nonempty list of integers")
    if any(isinstance(n, bool) or not isinstance(n, int) or n < 2 for n in value):
        raise ConfigInvalid(key, "every n must be an integer >= 2")
    if any(a >= b for a, b in zip(value, value[1:])):
        raise ConfigInvalid(key, "must be strictly increasing")
    return tuple(value)


def load_settings(config_path: Path | None, overrides: Sequence[str],
                  clamp_cell_mass: float | None = None) -> Settings:
    cfg = {k: copy.deepcopy(v[0]) for k, v in CONFIG_KEYS.items()}
    if config_path is not None:
        try:
            with open(config_path, "rb") as fh:
                loaded = tomllib.load(fh)
        except OSError as exc:
            raise ConfigInvalid("config", f"cannot read {config_path}: {exc.strerror}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigInvalid("config", f"not valid TOML: {exc}") from None
        unknown = sorted(set(loaded) - set(CONFIG_KEYS))
        if unknown:
            raise ConfigInvalid(unknown[0], "unknown key")
        cfg.update(loaded)
    for item in overrides:
        _apply_override(cfg, item)
    if clamp_cell_mass is not None:
        cfg["clamp_cell_mass"] = clamp_cell_mass

    m = _int(cfg, "m", 2)
    trials = _int(cfg, "trials", 1)
    seed = cfg["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigInvalid("seed", "must be a 64-bit unsigned integer")
    names = cfg["detectors"]
    if not isinstance(names, list) or not names:
        raise ConfigInvalid("detectors", "must be a nonempty list")
    for name in names:
        if name not in ("kl", "mmd", "ml"):
            raise ConfigInvalid("detectors", f"unknown detector {name!r}")
    if len(set(names)) != len(names):
        raise ConfigInvalid("detectors", "duplicate detector")
    placement = cfg["placement"]
    if placement != "uniform":
        if isinstance(placement, bool) or not isinstance(placement, int) or not 0 <= placement < m:
            raise ConfigInvalid("placement", f"must be 'uniform' or an index in [0, {m})")
    gamma = cfg["gamma"]
    if isinstance(gamma, bool) or not isinstance(gamma, (int, float)) or not (gamma > 0 and math.isfinite(gamma)):
        raise ConfigInvalid("gamma", "must be > 0")
    try:
        schedule = parse_schedule(str(cfg["schedule"]))
    except ValueError as exc:
        raise ConfigInvalid("schedule", str(exc)) from None
    clamp = cfg["clamp_cell_mass"]
    if clamp is not None and (isinstance(clamp, bool) or not isinstance(clamp, (int, float))
                              or not 0 < clamp < 1):
        raise ConfigInvalid("clamp_cell_mass", "must lie in (0, 1)")
    pi = parse_distribution(cfg["pi"], "pi")
    mu = parse_distribution(cfg["mu"], "mu")
    if mu == pi:
        raise ConfigInvalid("mu", "must differ from pi")

    studies = []
    if cfg["studies"] is not None:
        if not isinstance(cfg["studies"], list) or not cfg["studies"]:
            raise ConfigInvalid("studies", "must be a nonempty list of tables")
        seen = set()
        for i, st in enumerate(cfg["studies"]):
            if not isinstance(st, dict):
                raise ConfigInvalid(f"studies.{i}", "must be a table")
            extra = sorted(set(st) - STUDY_KEYS)
            if extra:
                raise ConfigInvalid(f"studies.{i}.{extra[0]}", "unknown key")
            name = st.get("name")
            if not isinstance(name, str) or not name or name in seen:
                raise ConfigInvalid(f"studies.{i}.name", "must be a unique nonempty string")
            seen.add(name)
            if "mu" not in st:
                raise ConfigInvalid(f"studies.{i}.mu", "missing")
            smu = parse_distribution(st["mu"], f"studies.{i}.mu")
            if smu == pi:
                raise ConfigInvalid(f"studies.{i}.mu", "must differ from pi")
            grid = _n_grid(st.get("n_grid", cfg["n_grid"]), f"studies.{i}.n_grid")
            studies.append({"name": name, "mu": smu, "n_grid": grid})

    return Settings(
        raw=cfg,
        m=m,
        n_grid=_n_grid(cfg["n_grid"]),
        trials=trials,
        seed=seed,
        detector_names=tuple(names),
        placement=placement,
        min_errors_for_fit=_int(cfg, "min_errors_for_fit", 1),
        gamma=float(gamma),
        schedule=schedule,
        clamp_cell_mass=None if clamp is None else float(clamp),
        pi=pi,
        mu=mu,
        studies=studies,
    )


def parse_and_validate(argv: Sequence[str]) -> CliInvocation:
    """Parse ``argv`` into a fully validated invocation.

    Raises :class:`UsageError` or :class:`ConfigInvalid`; both map to exit 2.
    """
    args = build_parser().parse_args(list(argv))
    settings = load_settings(args.config, args.overrides, args.clamp_cell_mass)
    inv = CliInvocation(
        subcommand=args.subcommand,
        settings=settings,
        config_path=args.config,
        overrides=list(args.overrides),
        output_path=args.output,
        format=args.format,
        input_path=getattr(args, "input", None),
        by_column=getattr(args, "by_column", False),
        detector=getattr(args, "detector", None),
        study=getattr(args, "study", None),
        output_dir=getattr(args, "output_dir", None),
    )
    if inv.format == "csv" and inv.subcommand != "simulate":
        raise UsageError("format", f"csv output is only available for simulate, not {inv.subcommand}")
    if inv.subcommand == "simulate":
        names = [s["name"] for s in settings.studies]
        if inv.study is not None and inv.study not in names:
            raise UsageError("study", f"no study named {inv.study!r}")
        if len(names) > 1 and inv.study is None and inv.output_dir is None:
            stem = inv.config_path.stem if inv.config_path is not None else "studies"
            inv.output_dir = Path(stem)
    return inv


def _read_text(path: str | None) -> str:
    if path in (None, "-"):
        return sys.stdin.read()
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError("input", f"cannot read {path}: {exc.strerror}") from None


def read_sequences(text: str, by_column: bool = False) -> list[list[float]]:
    """Rows of comma- or whitespace-separated numbers; blank and ``#`` lines skipped."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = [c for c in line.replace(",", " ").split()]
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise UsageError("input", f"line {lineno}: not a number") from None
    if not rows:
        raise UsageError("input", "no data")
    if by_column:
        if len({len(r) for r in rows}) != 1:
            raise UsageError("input", "ragged columns")
        rows = [list(col) for col in zip(*rows)]
    for r in rows:
        if not all(math.isfinite(v) for v in r):
            raise UsageError("input", "values must be finite")
    return rows


def _write(inv: CliInvocation, text: str, path: Path | None = None) -> None:
    path = path or inv.output_path
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _finite_or_marker(v: float):
    if math.isfinite(v):
        return v
    return "inf" if v > 0 else "-inf"


def _cmd_estimate_kl(inv: CliInvocation) -> str:
    s = inv.settings
    samples = read_sequences(_read_text(inv.input_path))
    values = estimate_kl_batch(samples, s.pi, s.schedule, s.clamp_cell_mass)
    return _json({
        "estimates": values,
        "q": distribution_to_dict(s.pi),
        "schedule": s.schedule.describe(),
        "certified": s.clamp_cell_mass is None,
    })


def _cmd_estimate_mmd(inv: CliInvocation) -> str:
    s = inv.settings
    samples = read_sequences(_read_text(inv.input_path))
    values = []
    for i, sample in enumerate(samples):
        try:
            values.append(mmd2_unbiased(sample, s.pi, s.kernel))
        except OutlierSeqError as exc:
            raise type(exc)(f"element {i}: {exc}") from exc
    return _json({"estimates": values, "q": distribution_to_dict(s.pi), "gamma": s.gamma})


def _cmd_detect(inv: CliInvocation) -> str:
    s = inv.settings
    rows = read_sequences(_read_text(inv.input_path), inv.by_column)
    try:
        batch = SequenceBatch(rows)
    except ValueError as exc:
        raise UsageError("input", str(exc)) from None
    name = inv.detector or s.detector_names[0]
    result = detect(batch, s.pi, s.detector(name))
    out = result.to_dict()
    out["m"] = batch.m
    out["n"] = batch.n
    out["index_base"] = 0
    return _json(out)


def _cmd_analyze(inv: CliInvocation) -> str:
    s = inv.settings
    report = exponent_report(s.pi, s.mu, s.gamma).to_dict()
    report["pi"] = distribution_to_dict(s.pi)
    report["mu"] = distribution_to_dict(s.mu)
    return _json(report)


def _studies(inv: CliInvocation) -> list[tuple[str | None, ExperimentConfig]]:
    s = inv.settings
    if not s.studies:
        return [(None, s.experiment(s.mu, s.n_grid))]
    chosen = [st for st in s.studies if inv.study in (None, st["name"])]
    return [(st["name"], s.experiment(st["mu"], st["n_grid"])) for st in chosen]


def _render_curve(curve: ErrorCurve, fmt: str) -> str:
    if fmt == "csv":
        return curve.to_csv()
    rows = []
    for r in curve.rows:
        rec = dict(r.__dict__)
        rec["log_pe"] = _finite_or_marker(r.log_pe)
        rows.append(rec)
    return _json({"rows": rows})


def _cmd_simulate(inv: CliInvocation) -> str | None:
    runs = _studies(inv)
    if inv.output_dir is not None:
        inv.output_dir.mkdir(parents=True, exist_ok=True)
        suffix = ".csv" if inv.format == "csv" else ".json"
        for name, config in runs:
            curve = estimate_error_curve(config)
            _write(inv, _render_curve(curve, inv.format), inv.output_dir / f"{name or 'curve'}{suffix}")
        return None
    (_, config), = runs
    return _render_curve(estimate_error_curve(config), inv.format)


def _theoretical_floor(name: str, s: Settings, mu: DistributionSpec) -> float | None:
    if name == "ml":
        return exponent_ml(s.pi, mu)
    if name == "mmd":
        return bound_mmd_test(s.pi, mu, s.gamma)
    try:
        b = density_ratio_bounds(mu, s.pi)
    except UnboundedRatio:
        return None
    return bound_kl_test(s.pi, mu, b.k1, b.k2)


def _cmd_fit_exponent(inv: CliInvocation) -> str:
    s = inv.settings
    text = _read_text(inv.input_path)
    try:
        curve = ErrorCurve.from_csv(text)
    except (ValueError, KeyError) as exc:
        raise UsageError("input", f"not an error-curve CSV: {exc}") from None
    fits = []
    for name in dict.fromkeys(r.detector for r in curve.rows):
        fit = fit_exponent(curve, name, _theoretical_floor(name, s, s.mu), s.min_errors_for_fit)
        fits.append(fit.to_dict())
    return _json({"fits": fits, "mu": distribution_to_dict(s.mu), "pi": distribution_to_dict(s.pi)})


_COMMANDS = {
    "estimate-kl": _cmd_estimate_kl,
    "estimate-mmd": _cmd_estimate_mmd,
    "detect": _cmd_detect,
    "analyze": _cmd_analyze,
    "simulate": _cmd_simulate,
    "fit-exponent": _cmd_fit_exponent,
}


def run(inv: CliInvocation) -> int:
    """Execute a validated invocation; returns the process exit code."""
    try:
        text = _COMMANDS[inv.subcommand](inv)
    except (UsageError, ConfigInvalid) as exc:
        print(f"error: {exc.field}: {exc.reason}", file=sys.stderr)
        return 2
    except OutlierSeqError as exc:
        print(f"error: {inv.subcommand}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    if text is not None:
        _write(inv, text)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        inv = parse_and_validate(argv)
    except (UsageError, ConfigInvalid) as exc:
        print(f"error: {exc.field}: {exc.reason}", file=sys.stderr)
        return 2
    return run(inv)


if __name__ == "__main__":
    sys.exit(main())
