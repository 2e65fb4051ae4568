"""Delay matrices and inframetric analytics.

A delay space is an N x N matrix of pairwise delays (possibly asymmetric,
possibly with missing entries).  This module loads and generates such
matrices and computes the analytics that drive everything else: per-triple
dilation ratios (rho), ball volumes, growth, the volume exponent alpha,
sandwich-inclusion checks, sample-count requirements, ring occupancy
histograms, and the ground-truth nearest-neighbor oracle.

Missing entries are stored as NaN.  All functions treat a missing entry as
"not measurable": triples containing one are skipped, balls exclude the
node, the oracle ignores the server.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rings import ring_index

MISSING = float("nan")

DEFAULT_PERCENTILES = (5, 25, 50, 75, 90, 95, 99, 100)


class DelayDataError(ValueError):
    """Raised for malformed or contract-violating delay data."""


@dataclass(frozen=True)
class BallQuery:
    """Closed ball around ``center``: nodes v with d(center, v) <= radius."""

    center: int
    radius: float
    members: frozenset[int]


@dataclass(frozen=True)
class SandwichCheck:
    """Outcome of a two-sided ball-inclusion check.

    ``violator`` is a node id breaking one of the inclusions (None if ok);
    ``side`` is "inner" or "outer".  ``skipped`` counts nodes that could not
    be verified because a needed entry was missing.
    """

    ok: bool
    violator: int | None = None
    side: str | None = None
    skipped: int = 0


@dataclass(frozen=True)
class RhoStats:
    quantiles: dict[float, float]
    frac_gt2: float
    frac_gt3: float
    sampled: int
    skipped: int


@dataclass
class InframetricStats:
    """Bundle of delay-space analytics for reports and CSV export."""

    rho: RhoStats
    growth_by_radius: list[tuple[float, float, float]]
    alpha_by_radius_and_x: list[tuple[float, float, float]]
    ring_occupancy: list[tuple[int, float]]
    delta_ratio: float


class DelayMatrix:
    """Dense pairwise delay matrix with missing-entry support.

    ``values[i, j]`` is the delay from node i to node j in milliseconds, or
    NaN when unmeasured.  The diagonal is always 0.  ``symmetric`` records
    whether every present (i, j)/(j, i) pair was equal at load time.
    """

    __slots__ = ("values", "symmetric", "n")

    def __init__(self, values: np.ndarray, symmetric: bool | None = None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise DelayDataError(f"delay matrix must be square, got shape {values.shape}")
        if values.shape[0] < 1:
            raise DelayDataError("empty delay matrix")
        diag = np.diagonal(values)
        if not np.all((diag == 0.0) | np.isnan(diag)):
            raise DelayDataError("diagonal entries must be 0 or missing")
        values = values.copy()
        np.fill_diagonal(values, 0.0)
        with np.errstate(invalid="ignore"):
            if np.any(values < 0.0):
                raise DelayDataError("negative delay entry")
        self.values = values
        self.n = values.shape[0]
        if symmetric is None:
            symmetric = _is_symmetric(values)
        self.symmetric = bool(symmetric)

    def delay(self, i: int, j: int) -> float | None:
        """Delay from i to j, or None when the entry is missing."""
        v = self.values[i, j]
        return None if math.isnan(v) else float(v)

    def present(self, i: int, j: int) -> bool:
        return not math.isnan(self.values[i, j])

    def present_fraction(self) -> float:
        off = self.n * (self.n - 1)
        if off == 0:
            return 1.0
        missing = int(np.isnan(self.values).sum())
        return 1.0 - missing / off


def _is_symmetric(values: np.ndarray) -> bool:
    both = ~np.isnan(values) & ~np.isnan(values.T)
    return bool(np.all(values[both] == values.T[both]))


# ---------------------------------------------------------------------------
# Loading / saving / generation
# ---------------------------------------------------------------------------

def load_matrix(path: str | Path, fmt: str = "king-text") -> DelayMatrix:
    """Load a delay matrix from disk.

    king-text: whitespace-separated N x N table, one row per line, ``-1`` or
    an empty field meaning missing.  csv: a ``n=<N>`` header line followed by
    comma-separated rows with the same conventions.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DelayDataError(f"cannot read matrix file {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if fmt == "king-text":
        rows = [ln.split() for ln in lines]
    elif fmt == "csv":
        if not lines or not lines[0].replace(" ", "").startswith("n="):
            raise DelayDataError(f"{path}: csv matrix must start with a 'n=<N>' header")
        declared = int(lines[0].split("=", 1)[1])
        rows = [ln.split(",") for ln in lines[1:]]
        if len(rows) != declared:
            raise DelayDataError(f"{path}: header says n={declared} but found {len(rows)} rows")
    else:
        raise DelayDataError(f"unknown matrix format {fmt!r}")
    n = len(rows)
    if n == 0:
        raise DelayDataError(f"{path}: no rows")
    values = np.full((n, n), MISSING)
    for i, row in enumerate(rows):
        if len(row) != n:
            raise DelayDataError(f"{path}: row {i} has {len(row)} fields, expected {n}")
        for j, tok in enumerate(row):
            tok = tok.strip()
            if tok == "" or tok == "-1":
                continue
            v = float(tok)
            if v < 0.0:
                raise DelayDataError(f"{path}: negative delay {v} at ({i},{j})")
            values[i, j] = v
    return DelayMatrix(values)


def save_matrix(m: DelayMatrix, path: str | Path, fmt: str = "king-text") -> None:
    """Write a matrix so that load_matrix round-trips present entries exactly."""
    path = Path(path)
    lines = []
    if fmt == "csv":
        lines.append(f"n={m.n}")
        sep = ","
    elif fmt == "king-text":
        sep = " "
    else:
        raise DelayDataError(f"unknown matrix format {fmt!r}")
    for i in range(m.n):
        row = m.values[i]
        lines.append(sep.join("-1" if math.isnan(v) else repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def gen_synthetic(
    n: int,
    kind: str,
    noise: float = 0.0,
    asym_factor: float = 0.0,
    seed: int = 0,
    clusters: int = 3,
    scale: float = 200.0,
    dim: int = 5,
    quantize_ms: float = 0.0,
) -> DelayMatrix:
    """Generate a seeded synthetic delay matrix.

    euclidean: points uniform in a ``dim``-dimensional box, delays are scaled
    pairwise distances, optionally inflated by symmetric multiplicative noise
    drawn per unordered pair from [0, noise].
    clustered: multi-scale blobs, then as euclidean.
    asymmetric: clustered base, then each direction independently perturbed
    by a factor in [1 - asym_factor, 1 + asym_factor].

    ``quantize_ms`` rounds delays to that measurement granularity (0 keeps
    exact values); wide-area RTT collections are integer-millisecond, so
    quantized matrices are the realistic ones.  Quantization perturbs the
    triangle inequality by up to one quantum, so leave it off when exact
    metric structure matters.
    """
    if n < 2:
        raise DelayDataError(f"need at least 2 nodes, got {n}")
    if noise < 0 or asym_factor < 0 or quantize_ms < 0:
        raise DelayDataError("noise, asym_factor and quantize_ms must be >= 0")
    if asym_factor >= 1.0:
        raise DelayDataError("asym_factor must be < 1 to keep delays positive")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _KIND_CODES[kind]]))
    if kind in ("clustered", "asymmetric"):
        # multi-scale blobs: per-point radial scatter is log-spread so pairwise
        # delays cover several octaves, the way wide-area delay spaces do
        centers = rng.uniform(0.0, 1.0, size=(clusters, dim)) * scale
        assign = rng.integers(0, clusters, size=n)
        sigma = np.exp(rng.uniform(np.log(0.01 * scale), np.log(0.15 * scale), size=n))
        pts = centers[assign] + rng.normal(0.0, 1.0, size=(n, dim)) * sigma[:, None]
    elif kind == "euclidean":
        pts = rng.uniform(0.0, 1.0, size=(n, dim)) * scale
    else:
        raise DelayDataError(f"unknown synthetic kind {kind!r}")
    diff = pts[:, None, :] - pts[None, :, :]
    base = np.sqrt((diff * diff).sum(axis=2))
    if noise > 0:
        fac = 1.0 + rng.uniform(0.0, noise, size=(n, n))
        fac = np.triu(fac, 1)
        fac = fac + fac.T  # symmetric per unordered pair
        base = base * np.where(fac > 0, fac, 1.0)
    if kind == "asymmetric" and asym_factor > 0:
        fac = 1.0 + rng.uniform(-asym_factor, asym_factor, size=(n, n))
        base = base * fac
    if quantize_ms > 0:
        base = np.maximum(np.round(base / quantize_ms), 1.0) * quantize_ms
    np.fill_diagonal(base, 0.0)
    return DelayMatrix(base)


_KIND_CODES = {"euclidean": 1, "clustered": 2, "asymmetric": 3}


# ---------------------------------------------------------------------------
# Inframetric parameter rho
# ---------------------------------------------------------------------------

def rho_of_triple(m: DelayMatrix, i: int, j: int, k: int) -> float | None:
    """Minimal dilation rho of the (i, j, k) triple.

    Evaluates all six ordered pairs (u, v) against the third node w:
    d(u, v) / max(d(u, w), d(v, w)).  Returns None (skip signal) when any of
    the six directed entries is missing or a denominator is nonpositive.
    """
    d = m.values
    six = (
        d[i, j], d[j, i],
        d[i, k], d[k, i],
        d[j, k], d[k, j],
    )
    if any(math.isnan(v) for v in six):
        return None
    dij, dji, dik, dki, djk, dkj = six
    denoms = (max(dik, djk), max(dij, dkj), max(dji, dki))
    if min(denoms) <= 0.0:
        return None
    return max(
        max(dij, dji) / denoms[0],
        max(dik, dki) / denoms[1],
        max(djk, dkj) / denoms[2],
    )


def _sample_triples(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` triples of distinct node ids, shape (count, 3)."""
    out = np.empty((0, 3), dtype=np.int64)
    while out.shape[0] < count:
        need = count - out.shape[0]
        cand = rng.integers(0, n, size=(int(need * 1.3) + 8, 3))
        ok = (cand[:, 0] != cand[:, 1]) & (cand[:, 0] != cand[:, 2]) & (cand[:, 1] != cand[:, 2])
        out = np.concatenate([out, cand[ok]])
    return out[:count]


def _triple_rhos(d: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Vectorized six-ratio rho for triple index array t (rows i, j, k).

    Triples with missing entries or zero denominators come back as NaN.
    """
    i, j, k = t[:, 0], t[:, 1], t[:, 2]
    dij, dji = d[i, j], d[j, i]
    dik, dki = d[i, k], d[k, i]
    djk, dkj = d[j, k], d[k, j]
    with np.errstate(invalid="ignore", divide="ignore"):
        r1 = np.maximum(dij, dji) / np.maximum(dik, djk)
        r2 = np.maximum(dik, dki) / np.maximum(dij, dkj)
        r3 = np.maximum(djk, dkj) / np.maximum(dji, dki)
        rho = np.maximum(np.maximum(r1, r2), r3)
    rho[~np.isfinite(rho)] = np.nan
    return rho


def rho_stats(
    m: DelayMatrix,
    sample_triples: int,
    seed: int = 0,
    percentiles: Sequence[float] = DEFAULT_PERCENTILES,
) -> RhoStats:
    """Monte Carlo rho distribution over distinct triples, deterministic in seed."""
    if sample_triples < 1:
        raise DelayDataError("sample_triples must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7001]))
    t = _sample_triples(m.n, sample_triples, rng)
    rho = _triple_rhos(m.values, t)
    good = rho[~np.isnan(rho)]
    if good.size == 0:
        raise DelayDataError("matrix too sparse: no complete triple sampled")
    qs = {float(p): float(np.percentile(good, p)) for p in percentiles}
    return RhoStats(
        quantiles=qs,
        frac_gt2=float(np.mean(good > 2.0)),
        frac_gt3=float(np.mean(good > 3.0)),
        sampled=int(good.size),
        skipped=int(rho.size - good.size),
    )


def instance_rho(
    m: DelayMatrix,
    exhaustive_limit: int = 64,
    sample_triples: int = 200_000,
    seed: int = 0,
    slack: float = 1e-9,
) -> float:
    """Max triple rho of the instance, plus a small slack.

    Exhaustive for small matrices; sampled otherwise (an underestimate is
    possible there, which is why callers get the slack knob).
    """
    d = m.values
    n = m.n
    if n <= exhaustive_limit:
        best = 0.0
        sym_max = np.fmax(d, d.T)
        for k in range(n):
            col = d[:, k]
            denom = np.maximum.outer(col, col)
            with np.errstate(invalid="ignore", divide="ignore"):
                ratios = sym_max / denom
            ratios[k, :] = np.nan
            ratios[:, k] = np.nan
            np.fill_diagonal(ratios, np.nan)
            ok = np.isfinite(ratios)
            if ok.any():
                best = max(best, float(ratios[ok].max()))
        return best + slack
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7002]))
    t = _sample_triples(n, sample_triples, rng)
    rho = _triple_rhos(d, t)
    good = rho[~np.isnan(rho)]
    if good.size == 0:
        raise DelayDataError("matrix too sparse: no complete triple sampled")
    return float(good.max()) + slack


# ---------------------------------------------------------------------------
# Balls, growth, alpha
# ---------------------------------------------------------------------------

def ball(m: DelayMatrix, p: int, r: float) -> BallQuery:
    """Nodes within delay r of p (missing entries excluded; p itself is in)."""
    if r < 0:
        raise DelayDataError("radius must be >= 0")
    row = m.values[p]
    with np.errstate(invalid="ignore"):
        members = np.nonzero(row <= r)[0]
    return BallQuery(center=p, radius=r, members=frozenset(int(v) for v in members))


def ball_volume(m: DelayMatrix, p: int, r: float) -> int:
    if r < 0:
        raise DelayDataError("radius must be >= 0")
    row = m.values[p]
    with np.errstate(invalid="ignore"):
        return int(np.count_nonzero(row <= r))


def _volumes_at(m: DelayMatrix, nodes: np.ndarray, r: float) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return (m.values[nodes] <= r).sum(axis=1)


def growth_at(m: DelayMatrix, p: int, r: float, rho: float) -> float:
    """Volume ratio |B_p(rho * r)| / |B_p(r)|.  Always >= 1."""
    if r <= 0:
        raise DelayDataError("radius must be > 0")
    if rho <= 1:
        raise DelayDataError("rho must be > 1")
    return ball_volume(m, p, rho * r) / ball_volume(m, p, r)


def growth_stats(
    m: DelayMatrix,
    rho: float,
    radii: Sequence[float],
    node_fraction: float = 1.0,
    seed: int = 0,
) -> list[tuple[float, float, float]]:
    """Per-radius (radius, median growth, p90 growth) over a node sample."""
    if not 0 < node_fraction <= 1:
        raise DelayDataError("node_fraction must be in (0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7003]))
    count = max(1, int(round(m.n * node_fraction)))
    nodes = rng.choice(m.n, size=count, replace=False)
    out = []
    for r in radii:
        inner = _volumes_at(m, nodes, r)
        outer = _volumes_at(m, nodes, rho * r)
        g = outer / inner
        out.append((float(r), float(np.median(g)), float(np.percentile(g, 90))))
    return out


def alpha_of(m: DelayMatrix, p: int, r: float, x: float) -> float:
    """Volume exponent log_x of |B_p(x*r)| / |B_p(r)|; 0 when the ratio is 1."""
    if x <= 1:
        raise DelayDataError("x must be > 1")
    if r <= 0:
        raise DelayDataError("radius must be > 0")
    ratio = ball_volume(m, p, x * r) / ball_volume(m, p, r)
    return math.log(ratio, x)


def alpha_grid(
    m: DelayMatrix,
    radii: Sequence[float],
    xs: Sequence[float],
    node_fraction: float = 1.0,
    seed: int = 0,
) -> list[tuple[float, float, float]]:
    """Median alpha for each (radius, x) over a node sample."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7004]))
    count = max(1, int(round(m.n * node_fraction)))
    nodes = rng.choice(m.n, size=count, replace=False)
    out = []
    for r in radii:
        inner = _volumes_at(m, nodes, r)
        for x in xs:
            if x <= 1:
                raise DelayDataError("x must be > 1")
            outer = _volumes_at(m, nodes, x * r)
            alphas = np.log(outer / inner) / math.log(x)
            out.append((float(r), float(x), float(np.median(alphas))))
    return out


def max_alpha_at(m: DelayMatrix, x: float, radii: Iterable[float], nodes: Iterable[int]) -> float:
    """Sup of the volume exponent at ratio x over the given (node, radius) grid."""
    if x <= 1:
        raise DelayDataError("x must be > 1")
    nodes = np.asarray(list(nodes))
    best = 0.0
    for r in radii:
        inner = _volumes_at(m, nodes, r)
        outer = _volumes_at(m, nodes, x * r)
        a = float(np.max(np.log(outer / inner))) / math.log(x)
        best = max(best, a)
    return best


def verify_sandwich(m: DelayMatrix, rho: float, p: int, q: int, r: float) -> SandwichCheck:
    """Check B_q(r) <= B_p(rho*r) <= B_q(rho^2*r).

    Requires d(p, q) <= r.  Nodes whose membership cannot be decided because
    the needed entry is missing are counted in ``skipped`` rather than
    reported as violations.
    """
    dpq = m.delay(p, q)
    if dpq is None or dpq > r:
        raise DelayDataError(f"precondition violated: d({p},{q}) must be present and <= {r}")
    rowp, rowq = m.values[p], m.values[q]
    skipped = 0
    with np.errstate(invalid="ignore"):
        in_q_r = rowq <= r
        in_p_rho = rowp <= rho * r
        in_q_rho2 = rowq <= rho * rho * r
    for v in np.nonzero(in_q_r)[0]:
        if math.isnan(rowp[v]):
            skipped += 1
        elif not in_p_rho[v]:
            return SandwichCheck(ok=False, violator=int(v), side="inner", skipped=skipped)
    for v in np.nonzero(in_p_rho)[0]:
        if math.isnan(rowq[v]):
            skipped += 1
        elif not in_q_rho2[v]:
            return SandwichCheck(ok=False, violator=int(v), side="outer", skipped=skipped)
    return SandwichCheck(ok=True, skipped=skipped)


# ---------------------------------------------------------------------------
# Sampling requirements and the exact oracle
# ---------------------------------------------------------------------------

def required_samples(rho: float, beta: float, alpha: float) -> int:
    """Number of uniform samples needed per search step: ceil(3 (rho^2/beta)^alpha)."""
    if rho <= 1:
        raise DelayDataError("rho must be > 1")
    if not 0 < beta <= 1:
        raise DelayDataError("beta must be in (0, 1]")
    if alpha < 0:
        raise DelayDataError("alpha must be >= 0")
    return math.ceil(3.0 * (rho * rho / beta) ** alpha)


def exact_nearest(
    m: DelayMatrix,
    servers: Iterable[int],
    target: int,
    k: int = 1,
    direction: str = "forward",
) -> list[tuple[int, float]]:
    """Ground-truth k nearest servers to ``target``, ties broken by node id.

    direction: "forward" ranks by d(server, target), "reverse" by
    d(target, server), "rtt-average" by the mean of both (requires both
    entries present).
    """
    if k < 1:
        raise DelayDataError("k must be >= 1")
    servers = list(servers)
    if not servers:
        raise DelayDataError("servers must be nonempty")
    d = m.values
    scored: list[tuple[float, int]] = []
    for s in servers:
        if direction == "forward":
            v = d[s, target]
        elif direction == "reverse":
            v = d[target, s]
        elif direction == "rtt-average":
            a, b = d[s, target], d[target, s]
            v = (a + b) / 2.0
        else:
            raise DelayDataError(f"unknown oracle direction {direction!r}")
        if not math.isnan(v):
            scored.append((float(v), s))
    if not scored:
        raise DelayDataError(f"no measurable delay from any server to target {target}")
    scored.sort()
    return [(s, v) for v, s in scored[:k]]


def delta_ratio(m: DelayMatrix) -> float:
    """Max present delay over min positive present delay."""
    vals = m.values[~np.isnan(m.values)]
    pos = vals[vals > 0]
    if pos.size == 0:
        raise DelayDataError("no positive delay present")
    return float(pos.max() / pos.min())


def search_hop_bound(delta: float, beta: float) -> float:
    """Worst-case hop count log base 1/beta of delta; infinite at beta = 1."""
    if not 0 < beta <= 1:
        raise DelayDataError("beta must be in (0, 1]")
    if beta == 1.0:
        return math.inf
    return math.log(delta) / math.log(1.0 / beta)


# ---------------------------------------------------------------------------
# Ring occupancy
# ---------------------------------------------------------------------------

def ring_occupancy(
    m: DelayMatrix,
    alpha_base: float = 1.0,
    s: float = 2.0,
    max_ring: int = 20,
) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Fraction of mapped nodes per delay ring.

    Returns (per_node, aggregate): per_node is an (n, max_ring) array of
    fractions summing to 1 for every node with at least one present positive
    delay; aggregate averages those rows.
    """
    per_node = np.zeros((m.n, max_ring))
    for p in range(m.n):
        row = m.values[p]
        counts = np.zeros(max_ring)
        total = 0
        for j in range(m.n):
            v = row[j]
            if j == p or math.isnan(v) or v <= 0:
                continue
            counts[ring_index(v, alpha_base, s, max_ring) - 1] += 1
            total += 1
        if total:
            per_node[p] = counts / total
    mapped = per_node.sum(axis=1) > 0
    agg = per_node[mapped].mean(axis=0) if mapped.any() else per_node.mean(axis=0)
    aggregate = [(i + 1, float(agg[i])) for i in range(max_ring)]
    return per_node, aggregate


def compute_inframetric_stats(
    m: DelayMatrix,
    rho: float = 3.0,
    sample_triples: int = 100_000,
    radii: Sequence[float] | None = None,
    xs: Sequence[float] = (3.0, 4.0, 6.0, 9.0),
    node_fraction: float = 1.0,
    seed: int = 0,
) -> InframetricStats:
    """Run the full analytics battery used by the analyze command."""
    if radii is None:
        pos = m.values[(~np.isnan(m.values)) & (m.values > 0)]
        hi = float(np.percentile(pos, 90))
        radii = [round(hi * f, 3) for f in (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0)]
    _, agg = ring_occupancy(m)
    return InframetricStats(
        rho=rho_stats(m, sample_triples, seed=seed),
        growth_by_radius=growth_stats(m, rho, radii, node_fraction, seed=seed),
        alpha_by_radius_and_x=alpha_grid(m, radii, xs, node_fraction, seed=seed),
        ring_occupancy=agg,
        delta_ratio=delta_ratio(m),
    )
