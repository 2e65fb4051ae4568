"""Network coordinates with confidence error.

Each node carries a low-dimensional embedding vector x plus a scalar
confidence error e in [e_min, 1] (1 means fully uncertain).  Updates follow
the adaptive-timestep spring relaxation: the sample weight balances local
and remote confidence, the point moves along the unit vector from the peer
toward itself, and e is an exponentially weighted blend of the relative
prediction error.  Samples whose relative error exceeds ``tiv_gate``
contribute with half weight, which damps the pull of routing-shortcut
outliers on the embedding.

Coordinates are immutable values; updates return a new Coordinate.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass


@dataclass(frozen=True)
class VivaldiParams:
    cc: float = 0.25       # adaptive timestep gain
    ce: float = 0.25       # error smoothing gain
    dim: int = 5
    tiv_gate: float = 0.5  # relative error above which a sample is down-weighted
    e_min: float = 0.01

    def __post_init__(self):
        if not (0 < self.cc <= 1 and 0 < self.ce <= 1):
            raise ValueError("cc and ce must be in (0, 1]")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass(frozen=True)
class Coordinate:
    x: tuple[float, ...]
    e: float = 1.0

    @staticmethod
    def origin(dim: int, e: float = 1.0) -> "Coordinate":
        return Coordinate(x=(0.0,) * dim, e=e)


def distance(a: Coordinate, b: Coordinate) -> float:
    """Euclidean distance between the embedding points (the delay estimate)."""
    xa, xb = a.x, b.x
    if len(xa) != len(xb):
        raise ValueError(f"dimension mismatch: {len(xa)} vs {len(xb)}")
    acc = 0.0
    for i in range(len(xa)):
        d = xa[i] - xb[i]
        acc += d * d
    return math.sqrt(acc)


def _random_unit(dim: int, seed: int) -> tuple[float, ...]:
    rng = random.Random(seed)
    while True:
        v = [rng.gauss(0.0, 1.0) for _ in range(dim)]
        norm = math.sqrt(sum(c * c for c in v))
        if norm > 1e-12:
            return tuple(c / norm for c in v)


def vivaldi_update(
    self_coord: Coordinate,
    peer: Coordinate,
    measured: float,
    params: VivaldiParams,
    tie_seed: int = 0,
) -> Coordinate:
    """One coordinate update of ``self_coord`` against a measured delay to ``peer``.

    Nonpositive samples are rejected (coordinate returned unchanged).  When
    the two points coincide, the displacement direction is a pseudo-random
    unit vector derived from ``tie_seed`` so replays are identical.
    """
    if measured <= 0 or not math.isfinite(measured):
        return self_coord
    xs, xp = self_coord.x, peer.x
    if len(xs) != len(xp):
        raise ValueError(f"dimension mismatch: {len(xs)} vs {len(xp)}")
    acc = 0.0
    for i in range(len(xs)):
        d = xs[i] - xp[i]
        acc += d * d
    dist = math.sqrt(acc)
    w = self_coord.e / max(self_coord.e + peer.e, 1e-12)
    sample_err = abs(dist - measured) / measured
    if sample_err > params.tiv_gate:
        w *= 0.5
    e_new = sample_err * params.ce * w + self_coord.e * (1.0 - params.ce * w)
    e_new = min(max(e_new, params.e_min), 1.0)
    shift = params.cc * w * (measured - dist)
    if dist > 0:
        scale = shift / dist
        x_new = tuple(xs[i] + scale * (xs[i] - xp[i]) for i in range(len(xs)))
    else:
        unit = _random_unit(len(xs), tie_seed)
        x_new = tuple(xs[i] + shift * unit[i] for i in range(len(xs)))
    return Coordinate(x=x_new, e=e_new)


def bootstrap_target(
    probes: list[tuple[Coordinate, float]],
    params: VivaldiParams,
    max_probes: int = 10,
    tie_seed: int = 0,
) -> Coordinate:
    """Estimate a coordinate for a node we only know through probe results.

    Starts from the origin with full uncertainty and folds in each
    (prober coordinate, measured delay) pair in order.  The probe list is
    capped so bringing a brand-new target online stays cheap.
    """
    if not probes:
        raise ValueError("need at least one probe to bootstrap a coordinate")
    if len(probes) > max_probes:
        raise ValueError(f"at most {max_probes} bootstrap probes allowed, got {len(probes)}")
    coord = Coordinate.origin(params.dim)
    for idx, (peer, measured) in enumerate(probes):
        coord = vivaldi_update(coord, peer, measured, params, tie_seed=tie_seed * 1000003 + idx)
    return coord


def localize_target(
    probes: list[tuple[Coordinate, float]],
    params: VivaldiParams,
    max_probes: int = 10,
    tie_seed: int = 0,
) -> Coordinate:
    """Place a fresh coordinate from probe results by least squares.

    One incremental pass over a handful of anchors leaves a coordinate far
    from where the measurements put it, which poisons every later
    estimated-distance ranking; solving the multilateration directly costs
    no extra measurements.  The confidence error is the median relative
    residual against the anchors.  Falls back to the incremental pass when
    there are too few anchors to solve.
    """
    if len(probes) < params.dim - 1 or len(probes) < 3:
        return bootstrap_target(probes, params, max_probes=max_probes, tie_seed=tie_seed)
    if len(probes) > max_probes:
        raise ValueError(f"at most {max_probes} bootstrap probes allowed, got {len(probes)}")
    import numpy as np

    anchors = np.asarray([p.x for p, _ in probes], dtype=float)
    dists = np.asarray([d for _, d in probes], dtype=float)
    a0, d0 = anchors[0], dists[0]
    lhs = 2.0 * (a0 - anchors[1:])
    rhs = dists[1:] ** 2 - d0 ** 2 - (anchors[1:] ** 2).sum(axis=1) + (a0 ** 2).sum()
    x, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    damping = 1e-3 * np.eye(anchors.shape[1])
    for _ in range(12):
        diff = x - anchors
        cur = np.maximum(np.sqrt((diff ** 2).sum(axis=1)), 1e-9)
        jac = diff / cur[:, None]
        resid = cur - dists
        step = np.linalg.solve(jac.T @ jac + damping, jac.T @ resid)
        x = x - step
    diff = x - anchors
    cur = np.maximum(np.sqrt((diff ** 2).sum(axis=1)), 1e-9)
    rel = np.abs(cur - dists) / np.maximum(dists, 1e-9)
    e = float(min(max(float(np.median(rel)), params.e_min), 1.0))
    if not np.all(np.isfinite(x)):
        return bootstrap_target(probes, params, max_probes=max_probes, tie_seed=tie_seed)
    return Coordinate(x=tuple(float(c) for c in x), e=e)
