"""Per-query quality metrics and campaign summaries.

Every completed query yields one QueryRecord comparing the returned server
against the ground-truth oracle.  Aggregation here is pure and
permutation-invariant; CSV writers put a provenance comment header on every
file so outputs can always be traced back to a seed and config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class QueryRecord:
    query_id: int
    trial: int
    algorithm: str
    target: int
    entry: int
    returned: int
    returned_delay: float
    oracle: int
    oracle_delay: float
    hops: int
    probes: int
    bytes: int
    sim_time: float
    forced: bool = False

    def __post_init__(self):
        if self.returned_delay < self.oracle_delay:
            raise ValueError(
                f"returned delay {self.returned_delay} beats the oracle "
                f"{self.oracle_delay}; oracle must be optimal"
            )
        if self.oracle_delay < 0 or self.hops < 0:
            raise ValueError("negative oracle delay or hop count")


def absolute_error(rec: QueryRecord) -> float:
    """Extra delay paid versus the optimal server, in ms.  Never negative."""
    return rec.returned_delay - rec.oracle_delay


def relative_error(rec: QueryRecord) -> float:
    """Absolute error over the optimal delay.

    A zero-delay oracle (target co-located with a server) gives 0 when the
    query also found a zero-delay server, infinity otherwise; callers
    exclude infinite values from medians and count them separately.
    """
    if rec.oracle_delay > 0:
        return (rec.returned_delay - rec.oracle_delay) / rec.oracle_delay
    return 0.0 if rec.returned_delay == 0 else math.inf


def search_hops(rec: QueryRecord) -> int:
    """Nodes on the forwarding path minus one: 0 when the entry node answers."""
    return max(rec.hops, 0)


def is_exact_hit(rec: QueryRecord) -> bool:
    """True when the returned server attains the oracle-optimal delay.

    Distinct servers can share the optimal delay, so a delay tie counts."""
    return rec.returned == rec.oracle or rec.returned_delay == rec.oracle_delay


def ccdf(values: Sequence[float], points: Sequence[float]) -> list[tuple[float, float]]:
    """Empirical complementary CDF: (x, P(X > x)) at each requested point."""
    if len(values) == 0:
        raise ValueError("ccdf needs at least one value")
    arr = np.asarray(values, dtype=float)
    return [(float(x), float(np.mean(arr > x))) for x in points]


def summarize(records: Iterable[QueryRecord]) -> list[dict]:
    """Per-algorithm campaign summary table.

    One row per (algorithm) with medians, p90s, means, the exact-hit
    fraction, and per-query cost averages.  Infinite relative errors are
    excluded from the distribution stats and reported as a count.
    """
    by_algo: dict[str, list[QueryRecord]] = {}
    for r in records:
        by_algo.setdefault(r.algorithm, []).append(r)
    rows = []
    for algo in sorted(by_algo):
        # canonical order keeps float aggregation permutation-invariant
        recs = sorted(by_algo[algo], key=lambda r: (r.trial, r.query_id, r.target))
        abs_err = np.array([absolute_error(r) for r in recs])
        rel_all = [relative_error(r) for r in recs]
        rel = np.array([v for v in rel_all if math.isfinite(v)])
        inf_rel = len(rel_all) - rel.size
        hops = np.array([search_hops(r) for r in recs])
        rows.append(
            {
                "algorithm": algo,
                "queries": len(recs),
                "exact_hit_frac": float(np.mean([is_exact_hit(r) for r in recs])),
                "abs_err_median": float(np.median(abs_err)),
                "abs_err_p90": float(np.percentile(abs_err, 90)),
                "abs_err_mean": float(np.mean(abs_err)),
                "rel_err_median": float(np.median(rel)) if rel.size else math.nan,
                "rel_err_p90": float(np.percentile(rel, 90)) if rel.size else math.nan,
                "rel_err_mean": float(np.mean(rel)) if rel.size else math.nan,
                "rel_err_inf_count": inf_rel,
                "hops_median": float(np.median(hops)),
                "hops_p90": float(np.percentile(hops, 90)),
                "probes_mean": float(np.mean([r.probes for r in recs])),
                "bytes_mean": float(np.mean([r.bytes for r in recs])),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_records_csv(path: str | Path, records: Sequence[QueryRecord], header_lines: Sequence[str] = ()) -> None:
    cols = [f.name for f in fields(QueryRecord)]
    lines = [f"# {h}" for h in header_lines]
    lines.append(",".join(cols))
    for r in records:
        lines.append(",".join(_fmt(getattr(r, c)) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


def write_table_csv(path: str | Path, rows: Sequence[dict], header_lines: Sequence[str] = ()) -> None:
    lines = [f"# {h}" for h in header_lines]
    if rows:
        cols = list(rows[0].keys())
        lines.append(",".join(cols))
        for row in rows:
            lines.append(",".join(_fmt(row[c]) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")
