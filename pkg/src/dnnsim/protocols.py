"""Node-level search and maintenance protocols.

All protocols are expressed as transition functions over a ``NodeState`` and
an in-flight ``QueryMessage``; side effects (measurements, accounting, churn
discovery) go through a ``Network`` object supplied by the caller.  The
discrete-event simulator provides the production Network; tests use the
in-memory one below.

Search algorithms share one skeleton: measure the delay to the target,
refresh the target's coordinate, select candidate neighbors from the rings,
pick a probe set, then forward to the best candidate or stop.  They differ
only in how the probe set is chosen:

- ``hybrid``      top-m candidates by estimated distance, plus any candidate
                  with an untrusted coordinate or a large gap between its
                  estimated and measured delay to the current node.
- ``direct``      probe every candidate.
- ``coordinate``  probe nothing; trust the estimates.
- ``meridian``    probe the delay band [(1-beta) d, (1+beta) d] and forward
                  only on a beta-fold improvement.

K-nearest and K-farthest searches wrap the same per-node step in a
backtracking walk over the forwarding path, accumulating results in the
message's omega list.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum

from .coordinates import (
    Coordinate,
    VivaldiParams,
    bootstrap_target,
    distance,
    localize_target,
    vivaldi_update,
)
from .rings import ConcentricRing, RingEntry


class Mode(str, Enum):
    NN = "nn"
    KNN = "knn"
    KFN = "kfn"


ALGORITHMS = ("hybrid", "coordinate", "direct", "meridian", "vivaldi")


@dataclass
class ProtocolParams:
    rho: float = 3.0                 # inframetric parameter bounding candidate radius
    beta: float = 1.0                # delay-reduction threshold (meridian runs 0.5)
    m: int = 4                       # probe shortlist size
    tau: int = 4                     # candidates need at least this many non-empty rings
    oversample_k: int = 10           # results per nearest/farthest discovery search
    err_gate: float = 0.7            # coordinate error above which we always probe
    tiv_gap_ms: float = 50.0         # estimate-vs-measured gap that forces a probe
    beta_farthest: float = 1.2
    hop_cap: int = 32                # guards equal-delay plateau walks
    bootstrap_probes: int = 10
    beta_cutoff: float | None = None  # optional stricter forwarding threshold, off by default
    vivaldi: VivaldiParams = field(default_factory=VivaldiParams)

    def __post_init__(self):
        if self.rho <= 1:
            raise ValueError("rho must be > 1")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must be in (0, 1]")
        for name in ("m", "tau", "oversample_k", "hop_cap", "bootstrap_probes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.err_gate <= 0 or self.tiv_gap_ms <= 0 or self.beta_farthest <= 0:
            raise ValueError("err_gate, tiv_gap_ms and beta_farthest must be > 0")


@dataclass
class NodeState:
    id: int
    coordinate: Coordinate
    ring: ConcentricRing
    params: ProtocolParams


ANCHOR_CAP = 10


@dataclass
class QueryMessage:
    """In-flight search state.

    ``path`` is the forwarding path (no duplicates); ``omega`` accumulates
    results for K-searches.  ``best_node``/``best_delay`` track the smallest
    real measurement toward the target seen so far, and ``anchors`` keeps the
    (prober coordinate, measured delay) pairs that localize the target; both
    are bookkeeping, not part of the wire format.  ``pin_target_coord`` marks
    a trusted caller-supplied coordinate (a node searching for itself) that
    no handler should touch.
    """

    target: int
    origin: int
    mode: Mode = Mode.NN
    k: int = 1
    init: bool = False
    target_coord: Coordinate | None = None
    path: list[int] = field(default_factory=list)
    omega: list[int] = field(default_factory=list)
    omega_delays: list[float] = field(default_factory=list)
    hop_budget: int = 32
    pin_target_coord: bool = False
    best_node: int | None = None
    best_delay: float = math.inf
    anchors: dict[int, tuple[Coordinate, float]] = field(default_factory=dict)

    def note(self, node: int, delay: float) -> None:
        if delay < self.best_delay:
            self.best_node = node
            self.best_delay = delay

    def add_anchor(self, node: int, coord: Coordinate, delay: float) -> None:
        """Remember a measurement toward the target; keeps the nearest few.

        Near anchors pin the target's position at the scale where candidate
        ranking happens, so the cap evicts the farthest anchor first."""
        self.anchors[node] = (coord, delay)
        if len(self.anchors) > ANCHOR_CAP:
            worst = max(self.anchors, key=lambda nid: (self.anchors[nid][1], nid))
            del self.anchors[worst]

    def anchor_list(self) -> list[tuple[Coordinate, float]]:
        return [self.anchors[nid] for nid in sorted(self.anchors)]


@dataclass(frozen=True)
class Forward:
    next_node: int


@dataclass(frozen=True)
class Terminate:
    best: int | None
    best_delay: float
    forced: bool = False


@dataclass
class QueryOutcome:
    result: int | None
    result_delay: float
    omega: list[int]
    omega_delays: list[float]
    path: list[int]
    hops: int
    forced: bool = False
    partial: bool = False


class Network:
    """Interface the protocols need from their surroundings.

    ``probe``/``measure`` both return a delay or None when the measurement is
    impossible (node churned away or entry missing); probes are the
    accounted, per-query measurements, measures belong to maintenance
    traffic.  ``rng`` returns the deterministic stream the caller wants the
    protocol step to draw from.
    """

    now: float = 0.0

    def node(self, nid: int) -> NodeState | None:
        raise NotImplementedError

    def probe(self, src: int, dst: int) -> float | None:
        raise NotImplementedError

    def measure(self, src: int, dst: int) -> float | None:
        raise NotImplementedError

    def drop_entry(self, owner: int, neighbor: int) -> None:
        raise NotImplementedError

    def rng(self) -> random.Random:
        raise NotImplementedError

    def account(self, kind: str, **cards: int) -> None:  # noqa: ARG002 - default sink
        return None

    def hop(self, src: int, dst: int) -> None:  # noqa: ARG002 - transport-time hook
        return None


class InMemoryNetwork(Network):
    """Reference Network over a delay matrix; used by tests and examples."""

    def __init__(self, matrix, nodes: dict[int, NodeState], seed: int = 0):
        self.matrix = matrix
        self.nodes = nodes
        self._rng = random.Random(seed)
        self.probe_count = 0
        self.accounts: list[tuple[str, dict]] = []
        self.now = 0.0

    def node(self, nid: int) -> NodeState | None:
        return self.nodes.get(nid)

    def _delay(self, src: int, dst: int) -> float | None:
        return self.matrix.delay(src, dst)

    def probe(self, src: int, dst: int) -> float | None:
        self.probe_count += 1
        return self._delay(src, dst)

    def measure(self, src: int, dst: int) -> float | None:
        return self._delay(src, dst)

    def drop_entry(self, owner: int, neighbor: int) -> None:
        node = self.nodes.get(owner)
        if node is not None:
            node.ring.remove(neighbor)

    def rng(self) -> random.Random:
        return self._rng

    def account(self, kind: str, **cards: int) -> None:
        self.accounts.append((kind, cards))


# ---------------------------------------------------------------------------
# Candidate selection
# ---------------------------------------------------------------------------

def choose_candidates(node: NodeState, msg: QueryMessage, d_pt: float) -> list[RingEntry]:
    """Ring entries that may sit closer to the target than this node.

    Scans rings 1..index(rho * d_pt), then drops forwarding-path members,
    the origin, already-found results, and neighbors advertising fewer than
    tau non-empty rings (too poorly connected to continue a search).
    """
    if d_pt <= 0:
        raise ValueError("d_pt must be > 0")
    p = node.params
    hi = node.ring.index_for(p.rho * d_pt)
    excluded = set(msg.path)
    excluded.update(msg.omega)
    excluded.add(msg.origin)
    excluded.add(node.id)
    excluded.add(msg.target)
    return [
        e
        for e in node.ring.neighbors_in_rings(1, hi)
        if e.neighbor not in excluded and e.nonempty_ring_count >= p.tau
    ]


def choose_farthest_candidates(node: NodeState, msg: QueryMessage, d_pt: float) -> list[RingEntry]:
    """Entries far enough from this node to possibly be farther from the target."""
    if d_pt <= 0:
        raise ValueError("d_pt must be > 0")
    p = node.params
    threshold = p.rho * (1.0 + p.beta_farthest) * d_pt
    excluded = set(msg.path)
    excluded.update(msg.omega)
    excluded.add(msg.origin)
    excluded.add(node.id)
    excluded.add(msg.target)
    return [
        e
        for e in node.ring.all_entries()
        if e.filtered_delay >= threshold and e.neighbor not in excluded
    ]


def _est_distance(entry: RingEntry, target_coord: Coordinate) -> float:
    if entry.coord is None:
        return math.inf
    return distance(entry.coord, target_coord)


def _entry_err(entry: RingEntry) -> float:
    return entry.coord.e if entry.coord is not None else 1.0


def _probe_shortlist(
    node: NodeState,
    candidates: list[RingEntry],
    target_coord: Coordinate,
    farthest: bool = False,
) -> list[RingEntry]:
    """Top-m candidates by estimated distance plus every candidate whose
    coordinate cannot be trusted (high error, or estimate far off the
    measured delay to this node)."""
    p = node.params
    sign = -1.0 if farthest else 1.0
    ranked = sorted(
        candidates,
        key=lambda e: (sign * _est_distance(e, target_coord), _entry_err(e), e.neighbor),
    )
    shortlist = ranked[: p.m]
    chosen = {e.neighbor for e in shortlist}
    for e in candidates:
        if e.neighbor in chosen:
            continue
        if _entry_err(e) > p.err_gate:
            shortlist.append(e)
            chosen.add(e.neighbor)
            continue
        if e.coord is not None:
            gap = abs(distance(e.coord, node.coordinate) - e.filtered_delay)
            if gap > p.tiv_gap_ms:
                shortlist.append(e)
                chosen.add(e.neighbor)
    return shortlist


def nearest_detector(
    node: NodeState,
    candidates: list[RingEntry],
    target_coord: Coordinate,
    d_pt: float,
    msg: QueryMessage,
    net: Network,
    policy: str = "hybrid",
    include_self: bool = True,
) -> tuple[int | None, float, dict[int, float]]:
    """Probe a pruned candidate set and return the node nearest to the target.

    The current node competes in the argmin with its own measured delay
    (unless it is already banked as a K-search result).  Delay ties prefer a
    candidate over staying put, then the most accurate coordinate, then the
    smaller id.  Probe failures drop the member from the comparison (and
    from the ring when the neighbor is gone).
    """
    if policy == "all":
        shortlist = list(candidates)
    else:
        shortlist = _probe_shortlist(node, candidates, target_coord)
    probed: dict[int, float] = {}
    for e in shortlist:
        dv = net.probe(e.neighbor, msg.target)
        peer = net.node(e.neighbor)
        if dv is None:
            if peer is None:
                net.drop_entry(node.id, e.neighbor)
            continue
        if peer is not None:
            # probe replies piggyback the prober's current coordinate and ring count
            e.coord = peer.coordinate
            e.nonempty_ring_count = peer.ring.nonempty_count()
            msg.add_anchor(e.neighbor, peer.coordinate, dv)
        probed[e.neighbor] = dv
        msg.note(e.neighbor, dv)
    err_of = {e.neighbor: _entry_err(e) for e in shortlist}
    best: tuple[int, float] | None = (node.id, d_pt) if include_self else None
    best_key = (d_pt, 1, node.coordinate.e, node.id) if include_self else None
    for nid, dv in probed.items():
        key = (dv, 0, err_of[nid], nid)
        if best_key is None or key < best_key:
            best_key = key
            best = (nid, dv)
    if best is None:
        return None, math.inf, probed
    return best[0], best[1], probed


def farthest_detector(
    node: NodeState,
    candidates: list[RingEntry],
    target_coord: Coordinate,
    d_pt: float,
    msg: QueryMessage,
    net: Network,
    include_self: bool = True,
) -> tuple[int | None, float, dict[int, float]]:
    """Mirror image of nearest_detector: argmax measured delay to the target."""
    shortlist = _probe_shortlist(node, candidates, target_coord, farthest=True)
    probed: dict[int, float] = {}
    for e in shortlist:
        dv = net.probe(e.neighbor, msg.target)
        peer = net.node(e.neighbor)
        if dv is None:
            if peer is None:
                net.drop_entry(node.id, e.neighbor)
            continue
        if peer is not None:
            e.coord = peer.coordinate
            e.nonempty_ring_count = peer.ring.nonempty_count()
            msg.add_anchor(e.neighbor, peer.coordinate, dv)
        probed[e.neighbor] = dv
    err_of = {e.neighbor: _entry_err(e) for e in shortlist}
    best: tuple[int, float] | None = (node.id, d_pt) if include_self else None
    best_key = (-d_pt, 1, node.coordinate.e, node.id) if include_self else None
    for nid, dv in probed.items():
        key = (-dv, 0, err_of[nid], nid)
        if best_key is None or key < best_key:
            best_key = key
            best = (nid, dv)
    if best is None:
        return None, math.inf, probed
    return best[0], best[1], probed


# ---------------------------------------------------------------------------
# Target coordinate maintenance
# ---------------------------------------------------------------------------

def ensure_target_coord(node: NodeState, msg: QueryMessage, d_pt: float, net: Network) -> None:
    """Initialize the target's coordinate on first contact, refine later.

    Initialization asks up to ``bootstrap_probes`` ring neighbors to probe
    the target; with an empty ring the node's own measurement seeds the
    estimate.  Every handler after that adds its own fresh measurement to
    the anchor set and re-localizes, so the estimate sharpens exactly where
    the search currently is.  A pinned coordinate (self-targeted search) is
    left untouched.
    """
    if msg.pin_target_coord and msg.target_coord is not None:
        return
    p = node.params
    rng = net.rng()
    if not msg.init:
        entries = node.ring.all_entries()
        count = min(p.bootstrap_probes, len(entries))
        sample = rng.sample(entries, count) if count else []
        for e in sample:
            dv = net.probe(e.neighbor, msg.target)
            if dv is None:
                if net.node(e.neighbor) is None:
                    net.drop_entry(node.id, e.neighbor)
                continue
            if e.coord is not None:
                msg.add_anchor(e.neighbor, e.coord, dv)
            msg.note(e.neighbor, dv)
            net.account("bootstrap_probe")
        msg.init = True
    msg.add_anchor(node.id, node.coordinate, d_pt)
    msg.target_coord = localize_target(
        msg.anchor_list(), p.vivaldi, max_probes=ANCHOR_CAP, tie_seed=rng.getrandbits(32)
    )


# ---------------------------------------------------------------------------
# Per-node search steps
# ---------------------------------------------------------------------------

def search_step(node: NodeState, msg: QueryMessage, net: Network, policy: str) -> Forward | Terminate:
    """One handling of the query at ``node`` for the hybrid/direct/coordinate family.

    Forwards when the best candidate is at least as close to the target as
    this node (the beta = 1 rule admits equal-delay steps) and the hop
    budget allows; otherwise terminates with the best node seen here.
    """
    assert node.id not in msg.path, "query revisited a path node"
    p = node.params
    d_pt = net.probe(node.id, msg.target)
    if d_pt is None:
        return Terminate(msg.best_node, msg.best_delay, forced=True)
    msg.note(node.id, d_pt)
    ensure_target_coord(node, msg, d_pt, net)
    candidates = choose_candidates(node, msg, d_pt)

    if policy == "coordinate":
        if candidates:
            assert msg.target_coord is not None
            ranked = sorted(
                candidates,
                key=lambda e: (_est_distance(e, msg.target_coord), _entry_err(e), e.neighbor),
            )
            pick = ranked[0]
            est = _est_distance(pick, msg.target_coord)
            if est <= d_pt and msg.hop_budget > 0:
                msg.path.append(node.id)
                msg.hop_budget -= 1
                return Forward(pick.neighbor)
        return Terminate(node.id, d_pt)

    assert msg.target_coord is not None
    # a node already banked as a K-search result cannot be a result again;
    # its leg then yields the best unbanked probe instead
    banked = msg.mode is not Mode.NN and node.id in msg.omega
    best, best_delay, _probed = nearest_detector(
        node, candidates, msg.target_coord, d_pt, msg, net, policy=policy,
        include_self=not banked,
    )
    if best is None:
        return Terminate(None, math.inf)
    limit = d_pt if p.beta_cutoff is None else p.beta_cutoff * d_pt
    wants_forward = best != node.id and best_delay <= limit
    if wants_forward and msg.hop_budget > 0:
        msg.path.append(node.id)
        msg.hop_budget -= 1
        return Forward(best)
    return Terminate(best, best_delay, forced=wants_forward and msg.hop_budget <= 0)


def meridian_step(node: NodeState, msg: QueryMessage, net: Network) -> Forward | Terminate:
    """Band-probing baseline: probe every ring member whose filtered delay is
    within (1 +- beta) of the target delay, forward only on a beta-fold
    improvement."""
    assert node.id not in msg.path
    p = node.params
    d_pt = net.probe(node.id, msg.target)
    if d_pt is None:
        return Terminate(msg.best_node, msg.best_delay, forced=True)
    msg.note(node.id, d_pt)
    lo, hi = (1.0 - p.beta) * d_pt, (1.0 + p.beta) * d_pt
    excluded = set(msg.path)
    excluded.add(msg.origin)
    excluded.add(node.id)
    excluded.add(msg.target)
    band = [
        e
        for e in node.ring.all_entries()
        if lo <= e.filtered_delay <= hi and e.neighbor not in excluded
    ]
    band.sort(key=lambda e: e.neighbor)
    probed: dict[int, float] = {}
    for e in band:
        dv = net.probe(e.neighbor, msg.target)
        if dv is None:
            if net.node(e.neighbor) is None:
                net.drop_entry(node.id, e.neighbor)
            continue
        probed[e.neighbor] = dv
        msg.note(e.neighbor, dv)
    best_cand = None
    for nid, dv in sorted(probed.items()):
        if best_cand is None or dv < probed[best_cand]:
            best_cand = nid
    if (
        best_cand is not None
        and probed[best_cand] <= p.beta * d_pt
        and msg.hop_budget > 0
    ):
        msg.path.append(node.id)
        msg.hop_budget -= 1
        return Forward(best_cand)
    if best_cand is not None and probed[best_cand] < d_pt:
        return Terminate(best_cand, probed[best_cand])
    return Terminate(node.id, d_pt)


def farthest_step(node: NodeState, msg: QueryMessage, net: Network) -> Forward | Terminate:
    """One handling of a K-farthest leg; forwards only to strictly farther nodes."""
    assert node.id not in msg.path
    d_pt = net.probe(node.id, msg.target)
    if d_pt is None:
        return Terminate(msg.best_node, msg.best_delay, forced=True)
    ensure_target_coord(node, msg, d_pt, net)
    candidates = choose_farthest_candidates(node, msg, d_pt)
    assert msg.target_coord is not None
    banked = node.id in msg.omega
    best, best_delay, _probed = farthest_detector(
        node, candidates, msg.target_coord, d_pt, msg, net, include_self=not banked
    )
    if best is None:
        return Terminate(None, math.inf)
    if best != node.id and best_delay > d_pt and msg.hop_budget > 0:
        msg.path.append(node.id)
        msg.hop_budget -= 1
        return Forward(best)
    return Terminate(best, best_delay)


def vivaldi_centralized(
    coords: dict[int, Coordinate], servers: list[int], target_coord: Coordinate
) -> int:
    """Centralized baseline: server with minimum coordinate distance, ties by id."""
    if not servers:
        raise ValueError("servers must be nonempty")
    return min(servers, key=lambda s: (distance(coords[s], target_coord), s))


# ---------------------------------------------------------------------------
# Query driver
# ---------------------------------------------------------------------------

def _step_for(algorithm: str, mode: Mode):
    if mode is Mode.KFN:
        return farthest_step
    if algorithm == "meridian":
        return meridian_step
    if algorithm in ("hybrid", "coordinate", "direct"):
        policy = {"hybrid": "hybrid", "coordinate": "coordinate", "direct": "all"}[algorithm]
        return lambda node, msg, net: search_step(node, msg, net, policy)
    raise ValueError(f"unknown query algorithm {algorithm!r}")


def run_query(net: Network, entry: int, msg: QueryMessage, algorithm: str = "hybrid") -> QueryOutcome:
    """Drive a query to completion: forward, terminate, and (for K-searches)
    backtrack along the path until omega holds k results or the path is
    exhausted (partial result, flagged)."""
    step = _step_for(algorithm, msg.mode)
    hops = 0
    forced = False
    current = entry
    while True:
        node = net.node(current)
        if node is None:
            forced = True
            break
        act = step(node, msg, net)
        if isinstance(act, Forward):
            if net.node(act.next_node) is None:
                # next hop churned away between probe and forward: undo and retry
                net.drop_entry(current, act.next_node)
                msg.path.pop()
                msg.hop_budget += 1
                continue
            net.account("query_forward", path=len(msg.path), omega=len(msg.omega))
            net.hop(current, act.next_node)
            current = act.next_node
            hops += 1
            continue
        forced = forced or act.forced
        if msg.mode is Mode.NN:
            result = msg.best_node
            delay = msg.best_delay
            if result is None and act.best is not None:
                result, delay = act.best, act.best_delay
            net.account("query_response", omega=len(msg.omega))
            return QueryOutcome(
                result=result,
                result_delay=delay,
                omega=list(msg.omega),
                omega_delays=list(msg.omega_delays),
                path=list(msg.path),
                hops=hops,
                forced=forced,
            )
        # K-search: bank the leg result, then backtrack to the predecessor
        if act.best is not None and act.best not in msg.omega:
            msg.omega.append(act.best)
            msg.omega_delays.append(act.best_delay)
        if len(msg.omega) >= msg.k:
            break
        if not msg.path:
            net.account("query_response", omega=len(msg.omega))
            return QueryOutcome(
                result=msg.omega[0] if msg.omega else None,
                result_delay=msg.omega_delays[0] if msg.omega_delays else math.inf,
                omega=list(msg.omega),
                omega_delays=list(msg.omega_delays),
                path=list(msg.path),
                hops=hops,
                forced=forced,
                partial=True,
            )
        current = msg.path.pop()
        msg.hop_budget += 1
        net.account("query_backtrack", path=len(msg.path), omega=len(msg.omega))
        hops += 1
    net.account("query_response", omega=len(msg.omega))
    return QueryOutcome(
        result=msg.omega[0] if msg.omega else msg.best_node,
        result_delay=msg.omega_delays[0] if msg.omega_delays else msg.best_delay,
        omega=list(msg.omega),
        omega_delays=list(msg.omega_delays),
        path=list(msg.path),
        hops=hops,
        forced=forced,
        partial=len(msg.omega) < msg.k,
    )


# ---------------------------------------------------------------------------
# Maintenance: gossip and oversampling
# ---------------------------------------------------------------------------

def _ring_samples(node: NodeState, rng: random.Random) -> list[int]:
    """One uniformly sampled neighbor per non-empty ring."""
    return [rng.choice(node.ring.rings[i]).neighbor for i in node.ring.nonempty_indices()]


def gossip_tick(net: Network, sender_id: int, bootstrap: int | None = None) -> None:
    """One push-pull gossip exchange initiated by ``sender_id``.

    The sender picks a uniform ring neighbor Q (or the bootstrap contact when
    its ring is empty) and sends one uniformly sampled neighbor per non-empty
    ring together with its own coordinate and non-empty ring count; the ack
    piggybacks Q's coordinate and Q's own per-ring samples.  Both sides fold
    the measured delay and coordinate into their state, Q contacts each
    neighbor sampled by the sender, and the sender contacts each neighbor
    sampled by Q.  The pull half is what lets a cold ring fill: with
    push-only sampling two freshly joined nodes that only know each other
    could never learn a third.  Contacting a churned node drops its stale
    entry instead of updating anything.
    """
    node = net.node(sender_id)
    if node is None:
        return
    rng = net.rng()
    entries = node.ring.all_entries()
    if entries:
        q_id = rng.choice(entries).neighbor
    elif bootstrap is not None and bootstrap != sender_id:
        q_id = bootstrap
    else:
        return
    push = _ring_samples(node, rng)
    net.account("gossip_request", samples=len(push))
    qnode = net.node(q_id)
    if qnode is None:
        net.drop_entry(sender_id, q_id)
        return
    pull = _ring_samples(qnode, rng)
    net.account("gossip_ack", samples=len(pull))
    _exchange(net, node, qnode)
    for receiver, sampled in ((qnode, push), (node, pull)):
        for s_id in sampled:
            if s_id in (q_id, sender_id):
                continue
            snode = net.node(s_id)
            net.account("gossip_contact")
            if snode is None:
                net.drop_entry(sender_id, s_id)
                net.drop_entry(q_id, s_id)
                continue
            _exchange(net, receiver, snode)


def _exchange(net: Network, a: NodeState, b: NodeState) -> None:
    """Mutual measure-observe-update between two live nodes."""
    rng = net.rng()
    d_ab = net.measure(a.id, b.id)
    if d_ab is not None and d_ab > 0:
        a.ring.observe(b.id, d_ab, b.coordinate, b.ring.nonempty_count(), net.now)
        a.coordinate = vivaldi_update(
            a.coordinate, b.coordinate, d_ab, a.params.vivaldi, tie_seed=rng.getrandbits(32)
        )
    d_ba = d_ab if net_symmetric(net) else net.measure(b.id, a.id)
    if d_ba is not None and d_ba > 0:
        b.ring.observe(a.id, d_ba, a.coordinate, a.ring.nonempty_count(), net.now)
        b.coordinate = vivaldi_update(
            b.coordinate, a.coordinate, d_ba, b.params.vivaldi, tie_seed=rng.getrandbits(32)
        )


def net_symmetric(net: Network) -> bool:
    matrix = getattr(net, "matrix", None)
    return bool(matrix is not None and matrix.symmetric)


def ring_mgmt_tick(net: Network, node_id: int) -> list[int]:
    """Thin every over-threshold ring back to capacity; returns evicted ids."""
    node = net.node(node_id)
    if node is None:
        return []
    return node.ring.manage_all()


def oversample_tick(net: Network, node_id: int) -> tuple[QueryOutcome | None, QueryOutcome | None]:
    """Discover hard-to-sample neighbors with self-targeted K searches.

    Issues a K-nearest and a K-farthest search with this node as the target,
    entering through a random ring neighbor, and stores the returned nodes
    in the rings with the delays gathered during the searches.  On an
    asymmetric delay space the stored value is re-measured in the forward
    direction so ring placement keeps its one-way meaning.
    """
    node = net.node(node_id)
    if node is None:
        return None, None
    rng = net.rng()
    outcomes = []
    for mode in (Mode.KNN, Mode.KFN):
        entries = node.ring.all_entries()
        if not entries:
            outcomes.append(None)
            continue
        entry = rng.choice(entries).neighbor
        msg = QueryMessage(
            target=node_id,
            origin=node_id,
            mode=mode,
            k=node.params.oversample_k,
            init=True,
            target_coord=node.coordinate,
            pin_target_coord=True,
            hop_budget=node.params.hop_cap,
        )
        outcome = run_query(net, entry, msg, algorithm="hybrid")
        for nbr, gathered in zip(outcome.omega, outcome.omega_delays):
            if nbr == node_id or not math.isfinite(gathered):
                continue
            nbr_node = net.node(nbr)
            if nbr_node is None:
                continue
            if net_symmetric(net):
                sample = gathered
            else:
                sample = net.probe(node_id, nbr)
                if sample is None:
                    continue
            if sample > 0:
                node.ring.observe(
                    nbr, sample, nbr_node.coordinate, nbr_node.ring.nonempty_count(), net.now
                )
        outcomes.append(outcome)
    return outcomes[0], outcomes[1]
