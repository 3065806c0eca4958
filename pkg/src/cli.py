from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from src import jsonutil
from src.config import RunConfig, load_run_config, settings
from src.dataset import CONTRAST_COMPONENTS, Dataset, load_dataset
from src.errors import IntermedError, InvalidConfig
from src.estimators import diagnose, estimate
from src.render import diagnostics_table, effect_line, report_table, study_table
from src.simulation import STUDY_SIZES, run_study


logger = logging.getLogger(__name__)


def _int_list(text: str) -> list[int]:
    try:
        out = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 1:
        raise argparse.ArgumentTypeError("sample sizes must be positive")
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="intermed", description="Interventional direct and indirect effects, optionally transported")
    ap.add_argument("--log-level", default=None, help="logging level (default from INTERMED_LOG_LEVEL)")
    ap.add_argument("--workers", type=int, default=None, help="parallelism cap (default from INTERMED_WORKERS)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate IDE/IIE from a run config")
    p.add_argument("--config", required=True, type=Path)

    p = sub.add_parser("diagnose", help="fit nuisances only and summarize weight tails")
    p.add_argument("--config", required=True, type=Path)

    p = sub.add_parser("simulate", help="Monte Carlo study on a built-in data-generating mechanism")
    p.add_argument("--dgm", required=True)
    p.add_argument("--n", type=_int_list, default=list(STUDY_SIZES))
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--estimator", choices=["onestep", "tmle", "both"], default="both")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", type=Path, default=Path("study.csv"))
    return ap


def _load(config: Path, workers: int | None) -> tuple[RunConfig, Dataset]:
    cfg = load_run_config(config)
    if workers is not None:
        cfg = cfg.model_copy(update={"workers": workers})
    if not cfg.data.is_file():
        raise InvalidConfig(f"data file not found: {cfg.data}")
    return cfg, load_dataset(cfg.data, cfg.roles(), cfg.family)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def cmd_estimate(config: Path, workers: int | None = None) -> int:
    cfg, d = _load(config, workers)
    report = estimate(d, cfg.effect_spec(), cfg.options())
    stem = cfg.output
    if cfg.format in ("csv", "both"):
        _write(stem.with_suffix(".csv"), report.to_csv())
    if cfg.format in ("json", "both"):
        _write(stem.with_suffix(".json"), report.to_json())
    logger.info("wrote %s report for n=%d to %s", cfg.format, d.n, stem)
    print(report_table(report))
    for row in report.rows:
        if row.contrast in CONTRAST_COMPONENTS:
            print(effect_line(row))
    unconverged = [k for k, log in report.tmle.items() if not log.converged]
    if unconverged:
        print(f"warning: partial TMLE did not converge for {', '.join(unconverged)}", file=sys.stderr)
    return 0


def cmd_diagnose(config: Path, workers: int | None = None) -> int:
    cfg, d = _load(config, workers)
    diag = diagnose(d, cfg.effect_spec(), cfg.options())
    _write(cfg.output.with_name(cfg.output.name + ".diagnostics.json"), jsonutil.dumps({"family": cfg.family, "n": d.n, "weights": diag}))
    print(diagnostics_table(diag))
    return 0


def cmd_simulate(dgm: str, n_list: Sequence[int], reps: int, estimator: str, seed: int, out: Path, *, folds: int = 5, workers: int | None = None) -> int:
    result = run_study(dgm, n_list, reps, estimator, seed, folds=folds, workers=workers or settings.workers)  # type: ignore[arg-type]
    _write(out, result.to_csv())
    print(study_table(result))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "estimate":
            return cmd_estimate(args.config, args.workers)
        if args.command == "diagnose":
            return cmd_diagnose(args.config, args.workers)
        return cmd_simulate(args.dgm, args.n, args.reps, args.estimator, args.seed, args.out, folds=args.folds, workers=args.workers)
    except IntermedError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
