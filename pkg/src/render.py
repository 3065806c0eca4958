from __future__ import annotations

import math
from typing import Mapping

from tabulate import tabulate

from src.estimators import EstimateReport, EstimateRow, WeightSummary
from src.simulation import StudyResult


ESTIMATOR_LABEL = {"onestep": "One-step", "tmle": "Partial TMLE"}


def _num(x: float | None, digits: int = 4) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{x:.{digits}f}"


def effect_line(row: EstimateRow) -> str:
    return f"{row.contrast} ({ESTIMATOR_LABEL[row.estimator]}): {_num(row.point)} (95% CI {_num(row.ci_lo)}, {_num(row.ci_hi)})"


def report_table(report: EstimateReport) -> str:
    tbl_rows = []
    for r in report.rows:
        tbl_rows.append(
            [
                r.contrast,
                ESTIMATOR_LABEL[r.estimator],
                _num(r.point),
                _num(r.se),
                f"[{_num(r.ci_lo)}, {_num(r.ci_hi)}]",
                "" if r.tmle_iters is None else f"{r.tmle_iters}{'' if r.tmle_converged else '*'}",
            ]
        )

    return tabulate(
        tbl_rows,
        headers=["Target", "Estimator", "Estimate", "SE", "95% CI", "TMLE iters"],
        tablefmt="github",
        disable_numparse=True,
    )


def diagnostics_table(diag: Mapping[str, WeightSummary]) -> str:
    tbl_rows = [[name, s.ratio, _num(s.frac_gt100), _num(s.p75, 2)] for name, s in diag.items()]
    return tabulate(tbl_rows, headers=["Component", "Ratio", "Frac > 100", "75th pct"], tablefmt="github", disable_numparse=True)


def study_table(result: StudyResult) -> str:
    """Rows n within estimator; Direct and Indirect column groups of |Bias|, sqrt(n)|Bias|, coverage."""
    cells: dict[tuple[str, int], dict[str, tuple[float, float, float]]] = {}
    for r in result.rows:
        cells.setdefault((r.estimator, r.n), {})[r.effect] = (r.abs_bias, r.sqrt_n_abs_bias, r.coverage95)

    tbl_rows = []
    last = None
    for (kind, n), by_effect in cells.items():
        label = ESTIMATOR_LABEL.get(kind, kind) if kind != last else ""
        last = kind
        row: list[str | int] = [label, n]
        for effect in ("IDE", "IIE"):
            bias, scaled, cov = by_effect.get(effect, (math.nan, math.nan, math.nan))
            row += [_num(bias, 2), _num(scaled, 2), _num(cov, 2)]
        tbl_rows.append(row)

    return tabulate(
        tbl_rows,
        headers=["", "n", "Direct |Bias|", "√n|Bias|", "95% Cov", "Indirect |Bias|", "√n|Bias|", "95% Cov"],
        tablefmt="github",
        disable_numparse=True,
    )
