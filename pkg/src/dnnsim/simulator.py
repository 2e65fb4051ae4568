"""Seeded discrete-event simulation over a delay matrix.

One event loop per trial drives maintenance ticks (gossip, ring management,
oversampling), churn, and the query workload.  Message delivery is instant
by default; the delay matrix is data, not transport.  Every random draw
comes from a purpose-keyed stream derived from (seed, trial, stream, node),
so adding a stream never perturbs the others and the whole run is a pure
function of (config, seed).  In particular the query workload stream is
shared across algorithms, which is what makes paired-seed comparisons
meaningful.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field, replace

import numpy as np

from . import protocols
from .coordinates import Coordinate
from .delay_space import DelayDataError, DelayMatrix, exact_nearest, gen_synthetic, load_matrix
from .metrics import QueryRecord
from .protocols import (
    Mode,
    NodeState,
    ProtocolParams,
    QueryMessage,
    localize_target,
    run_query,
    vivaldi_centralized,
)
from .rings import ConcentricRing


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending setting."""

    def __init__(self, key: str, message: str):
        super().__init__(f"config key '{key}': {message}")
        self.key = key


@dataclass(frozen=True)
class ByteCostModel:
    """Coarse wire-size model (bytes).  The defaults are calibrated so one
    band-probing step costs several times one shortlist-probing step; they
    are a reporting convention, not ground truth."""

    header: int = 32
    per_path_entry: int = 8
    per_coordinate: int = 48
    per_ring_sample: int = 16
    per_probe: int = 64

    def __post_init__(self):
        for name in ("header", "per_path_entry", "per_coordinate", "per_ring_sample", "per_probe"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "byte cost must be >= 0")


def account_bytes(kind: str, model: ByteCostModel, **cards: int) -> int:
    """Deterministic byte total for one message of the given kind."""
    h, pe, co, rs, pr = (
        model.header,
        model.per_path_entry,
        model.per_coordinate,
        model.per_ring_sample,
        model.per_probe,
    )
    if kind == "probe":
        return pr
    if kind == "probe_exchange":
        return 2 * pr
    if kind == "gossip_request":
        return h + cards.get("samples", 0) * rs + co
    if kind == "gossip_ack":
        return h + cards.get("samples", 0) * rs + co
    if kind == "gossip_contact":
        return 2 * h + 2 * co
    if kind == "bootstrap_probe":
        return 2 * h + co
    if kind in ("query_forward", "query_backtrack"):
        return h + cards.get("path", 0) * pe + co + cards.get("omega", 0) * pe
    if kind == "query_response":
        return h + (1 + cards.get("omega", 0)) * pe
    raise ValueError(f"unknown message kind {kind!r}")


@dataclass
class SimConfig:
    """One campaign description.  All fields have spelled-out defaults so a
    config file only needs the keys it changes."""

    matrix_path: str | None = None
    matrix_format: str = "king-text"
    gen_kind: str = "euclidean"
    gen_n: int = 600
    gen_noise: float = 0.05
    gen_asym: float = 0.0
    gen_clusters: int = 3
    gen_scale: float = 200.0
    gen_quantize_ms: float = 0.0
    server_count: int = 500
    trials: int = 5
    queries: int = 10_000
    gossip_mean_s: float = 1.0
    ring_mgmt_mean_s: float = 2.0
    oversample_mean_s: float = 60.0
    query_mean_s: float = 60.0
    warmup_s: float = 240.0
    seed: int = 1
    algorithm: str = "hybrid"
    mode: str = "nn"
    k: int = 1
    churn: list[tuple[float, str, int]] = field(default_factory=list)
    latency_mode: str = "instant"
    oracle_direction: str = "forward"
    dim: int = 5
    ring_capacity: int = 8
    ring_tolerance: int = 2
    ring_alpha_base: float = 1.0
    ring_spacing: float = 2.0
    ring_count: int = 20
    params: ProtocolParams = field(default_factory=ProtocolParams)
    byte_model: ByteCostModel = field(default_factory=ByteCostModel)
    trace: bool = False

    def validate(self) -> None:
        if self.server_count < 1:
            raise ConfigError("servers", "must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        if self.queries < 0:
            raise ConfigError("queries", "must be >= 0")
        for key in ("gossip_mean_s", "ring_mgmt_mean_s", "query_mean_s"):
            if getattr(self, key) <= 0:
                raise ConfigError(key, "mean inter-event time must be > 0")
        if self.oversample_mean_s < 0:
            raise ConfigError("oversample_mean_s", "must be >= 0 (0 disables oversampling)")
        if self.warmup_s < 0:
            raise ConfigError("warmup_s", "must be >= 0")
        if self.algorithm not in protocols.ALGORITHMS:
            raise ConfigError("algorithm", f"must be one of {protocols.ALGORITHMS}")
        if self.mode not in ("nn", "knn", "kfn"):
            raise ConfigError("mode", "must be nn, knn or kfn")
        if self.k < 1:
            raise ConfigError("k", "must be >= 1")
        if self.latency_mode not in ("instant", "matrix"):
            raise ConfigError("latency_mode", "must be instant or matrix")
        if self.oracle_direction not in ("forward", "reverse", "rtt-average"):
            raise ConfigError("oracle_direction", "must be forward, reverse or rtt-average")
        if not 0 < self.params.beta <= 1:
            raise ConfigError("beta", "must be in (0, 1]")
        for t, op, node in self.churn:
            if op not in ("join", "leave"):
                raise ConfigError("churn", f"unknown churn op {op!r}")
            if t < 0 or node < 0:
                raise ConfigError("churn", "churn times and node ids must be >= 0")


def apply_algorithm_defaults(config: SimConfig, algorithm: str) -> SimConfig:
    """Per-algorithm baseline parameters for comparison campaigns.

    The band-probing baseline runs a 0.5 reduction threshold with ring
    capacity 10, and neither it nor the centralized-coordinates baseline
    runs the oversampling discovery searches.
    """
    cfg = replace(config, algorithm=algorithm)
    if algorithm == "meridian":
        cfg = replace(
            cfg,
            params=replace(config.params, beta=0.5),
            ring_capacity=10,
            oversample_mean_s=0.0,
        )
    elif algorithm == "vivaldi":
        cfg = replace(cfg, oversample_mean_s=0.0)
    return cfg


@dataclass
class RunReport:
    records: list[QueryRecord]
    overhead: list[dict]
    server_sets: list[list[int]]
    skipped_queries: int = 0
    trace: list[tuple] | None = None


# stream tags for SeedSequence keying
_S_SERVERS = 1
_S_QUERY_TIMES = 2
_S_QUERY_PICK = 3
_S_QUERY_EXEC = 4
_S_MAINT = 5
_S_SCHED_GOSSIP = 6
_S_SCHED_MGMT = 7
_S_SCHED_OVERSAMPLE = 8
_S_BOOTSTRAP = 9
_S_CHURN = 10

_E_GOSSIP, _E_MGMT, _E_OVERSAMPLE, _E_QUERY, _E_JOIN, _E_LEAVE = range(6)


def _stream(*key: int) -> random.Random:
    ss = np.random.SeedSequence(list(key))
    state = ss.generate_state(2, np.uint64)
    return random.Random((int(state[0]) << 64) | int(state[1]))


def _exp(rng: random.Random, mean: float) -> float:
    # inverse-CDF so each stream's draw count maps 1:1 to events
    return -mean * math.log(1.0 - rng.random())


class _TrialNet(protocols.Network):
    """Production Network: matrix-backed measurements plus accounting."""

    def __init__(self, matrix: DelayMatrix, config: SimConfig, trial: int):
        self.matrix = matrix
        self.values = matrix.values
        self.config = config
        self.model = config.byte_model
        self.nodes: dict[int, NodeState] = {}
        self.departed: set[int] = set()
        self.now = 0.0
        self.trial = trial
        self._active_rng: random.Random | None = None
        self.actor: int | None = None
        self.category = "gossip"
        self.maint_bytes: dict[int, dict[str, int]] = {}
        self.total_bytes = 0
        self.query_bytes = 0
        self.query_probes = 0
        self.query_elapsed = 0.0
        self.in_query = False
        self.trace: list[tuple] | None = [] if config.trace else None

    # -- Network interface -------------------------------------------------

    def node(self, nid: int) -> NodeState | None:
        return self.nodes.get(nid)

    def _delay(self, src: int, dst: int) -> float | None:
        v = self.values[src, dst]
        return None if math.isnan(v) else float(v)

    def measure(self, src: int, dst: int) -> float | None:
        if src in self.departed or dst in self.departed:
            return None
        return self._delay(src, dst)

    def probe(self, src: int, dst: int) -> float | None:
        self._account("probe_exchange")
        if self.in_query:
            self.query_probes += 1
        if src in self.departed or dst in self.departed:
            return None
        d = self._delay(src, dst)
        if d is not None and self.in_query and self.config.latency_mode == "matrix":
            self.query_elapsed += 2 * d
        return d

    def hop(self, src: int, dst: int) -> None:
        if self.in_query and self.config.latency_mode == "matrix":
            d = self._delay(src, dst)
            if d is not None:
                self.query_elapsed += d

    def drop_entry(self, owner: int, neighbor: int) -> None:
        node = self.nodes.get(owner)
        if node is not None:
            node.ring.remove(neighbor)

    def rng(self) -> random.Random:
        assert self._active_rng is not None, "no active stream"
        return self._active_rng

    def account(self, kind: str, **cards: int) -> None:
        self._account(kind, **cards)

    def _account(self, kind: str, **cards: int) -> None:
        nbytes = account_bytes(kind, self.model, **cards)
        self.total_bytes += nbytes
        if self.in_query:
            self.query_bytes += nbytes
        elif self.actor is not None:
            bucket = self.maint_bytes.setdefault(self.actor, {})
            bucket[self.category] = bucket.get(self.category, 0) + nbytes
        if self.trace is not None:
            self.trace.append((self.now, self.actor, kind, nbytes))

    # -- bookkeeping -------------------------------------------------------

    def begin_query(self, rng: random.Random) -> None:
        self.in_query = True
        self.query_bytes = 0
        self.query_probes = 0
        self.query_elapsed = 0.0
        self._active_rng = rng

    def end_query(self) -> None:
        self.in_query = False
        self._active_rng = None

    def alive_servers(self) -> list[int]:
        return sorted(self.nodes)


def _fresh_node(nid: int, config: SimConfig) -> NodeState:
    ring = ConcentricRing(
        capacity=config.ring_capacity,
        tolerance=config.ring_tolerance,
        alpha_base=config.ring_alpha_base,
        s=config.ring_spacing,
        i_max=config.ring_count,
    )
    return NodeState(
        id=nid,
        coordinate=Coordinate.origin(config.params.vivaldi.dim),
        ring=ring,
        params=config.params,
    )


def load_or_generate(config: SimConfig) -> DelayMatrix:
    if config.matrix_path:
        return load_matrix(config.matrix_path, config.matrix_format)
    return gen_synthetic(
        config.gen_n,
        config.gen_kind,
        noise=config.gen_noise,
        asym_factor=config.gen_asym,
        seed=config.seed,
        clusters=config.gen_clusters,
        scale=config.gen_scale,
        quantize_ms=config.gen_quantize_ms,
    )


def run(config: SimConfig, matrix: DelayMatrix | None = None) -> RunReport:
    """Execute the configured campaign: ``trials`` independent event programs
    over freshly drawn server sets, merged into one report."""
    config.validate()
    if matrix is None:
        matrix = load_or_generate(config)
    if config.server_count + 1 > matrix.n:
        raise ConfigError("servers", f"need server_count < n = {matrix.n}")
    records: list[QueryRecord] = []
    overhead: list[dict] = []
    server_sets: list[list[int]] = []
    skipped = 0
    trace: list[tuple] | None = [] if config.trace else None
    for trial in range(config.trials):
        t_records, t_overhead, servers, t_skipped, t_trace = _run_trial(matrix, config, trial)
        records.extend(t_records)
        overhead.extend(t_overhead)
        server_sets.append(servers)
        skipped += t_skipped
        if trace is not None and t_trace is not None:
            trace.extend(t_trace)
    return RunReport(
        records=records,
        overhead=overhead,
        server_sets=server_sets,
        skipped_queries=skipped,
        trace=trace,
    )


def _run_trial(matrix: DelayMatrix, config: SimConfig, trial: int):
    seed = config.seed
    rng_servers = np.random.default_rng(np.random.SeedSequence([seed, trial, _S_SERVERS]))
    servers = sorted(int(s) for s in rng_servers.choice(matrix.n, size=config.server_count, replace=False))
    clients = [i for i in range(matrix.n) if i not in set(servers)]
    if not clients:
        raise ConfigError("servers", "no clients left to act as query targets")

    net = _TrialNet(matrix, config, trial)
    for sid in servers:
        net.nodes[sid] = _fresh_node(sid, config)
    # one seed contact per trial keeps the cold-start knowledge graph connected
    rng_boot = _stream(seed, trial, _S_BOOTSTRAP)
    seed_contact = servers[rng_boot.randrange(len(servers))]
    fallback = servers[0] if seed_contact != servers[0] else servers[-1]
    bootstrap: dict[int, int] = {
        sid: seed_contact if sid != seed_contact else fallback for sid in servers
    }

    maint_rng = {sid: _stream(seed, trial, _S_MAINT, sid) for sid in servers}
    sched_rng = {
        (_E_GOSSIP, sid): _stream(seed, trial, _S_SCHED_GOSSIP, sid) for sid in servers
    }
    sched_rng.update(
        {(_E_MGMT, sid): _stream(seed, trial, _S_SCHED_MGMT, sid) for sid in servers}
    )
    sched_rng.update(
        {(_E_OVERSAMPLE, sid): _stream(seed, trial, _S_SCHED_OVERSAMPLE, sid) for sid in servers}
    )

    heap: list[tuple[float, int, int, int]] = []
    seq = 0

    def push(t: float, kind: int, subject: int) -> None:
        nonlocal seq
        heapq.heappush(heap, (t, seq, kind, subject))
        seq += 1

    oversampling = config.oversample_mean_s > 0 and config.algorithm in (
        "hybrid",
        "coordinate",
        "direct",
    )
    for sid in servers:
        push(_exp(sched_rng[(_E_GOSSIP, sid)], config.gossip_mean_s), _E_GOSSIP, sid)
        push(_exp(sched_rng[(_E_MGMT, sid)], config.ring_mgmt_mean_s), _E_MGMT, sid)
        if oversampling:
            push(_exp(sched_rng[(_E_OVERSAMPLE, sid)], config.oversample_mean_s), _E_OVERSAMPLE, sid)

    rng_qtimes = _stream(seed, trial, _S_QUERY_TIMES)
    arrivals: list[float] = []
    t = config.warmup_s
    for _ in range(config.queries):
        t += _exp(rng_qtimes, config.query_mean_s)
        arrivals.append(t)
    for qi, at in enumerate(arrivals):
        push(at, _E_QUERY, qi)
    for ct, op, nid in sorted(config.churn):
        push(ct, _E_JOIN if op == "join" else _E_LEAVE, nid)
    t_end = arrivals[-1] if arrivals else config.warmup_s

    rng_qpick = _stream(seed, trial, _S_QUERY_PICK)

    t_records: list[QueryRecord] = []
    skipped = 0

    while heap and heap[0][0] <= t_end:
        when, _, kind, subject = heapq.heappop(heap)
        net.now = when
        if kind == _E_GOSSIP:
            if subject in net.nodes:
                net.actor, net.category = subject, "gossip"
                net._active_rng = maint_rng[subject]
                protocols.gossip_tick(net, subject, bootstrap.get(subject))
                net._active_rng = None
                push(when + _exp(sched_rng[(_E_GOSSIP, subject)], config.gossip_mean_s), _E_GOSSIP, subject)
        elif kind == _E_MGMT:
            if subject in net.nodes:
                net.actor, net.category = subject, "mgmt"
                protocols.ring_mgmt_tick(net, subject)
                push(when + _exp(sched_rng[(_E_MGMT, subject)], config.ring_mgmt_mean_s), _E_MGMT, subject)
        elif kind == _E_OVERSAMPLE:
            if subject in net.nodes:
                net.actor, net.category = subject, "oversample"
                net._active_rng = maint_rng[subject]
                protocols.oversample_tick(net, subject)
                net._active_rng = None
                push(
                    when + _exp(sched_rng[(_E_OVERSAMPLE, subject)], config.oversample_mean_s),
                    _E_OVERSAMPLE,
                    subject,
                )
        elif kind == _E_QUERY:
            rec, ok = _run_one_query(net, matrix, config, trial, subject, when, clients, rng_qpick)
            if ok:
                t_records.append(rec)
            else:
                skipped += 1
        elif kind in (_E_JOIN, _E_LEAVE):
            _apply_churn(net, config, kind, subject, bootstrap, maint_rng, sched_rng, push, when)
        net.actor = None

    t_overhead = [
        {
            "trial": trial,
            "node": nid,
            "gossip_bytes": bucket.get("gossip", 0),
            "oversample_bytes": bucket.get("oversample", 0),
            "mgmt_bytes": bucket.get("mgmt", 0),
        }
        for nid, bucket in sorted(net.maint_bytes.items())
    ]
    return t_records, t_overhead, servers, skipped, net.trace


def apply_churn(net: _TrialNet, op: str, nid: int, config: SimConfig, bootstrap_contact: int | None = None) -> None:
    """Apply one join/leave to the live trial state.

    Leaving drops the node from the server set; its entries elsewhere go
    stale and fall out on the next failed contact.  Joining creates a fresh
    empty-ring node pointing at a bootstrap contact.
    """
    if op == "leave":
        if nid not in net.nodes:
            raise ConfigError("churn", f"leave of unknown node {nid}")
        del net.nodes[nid]
        net.departed.add(nid)
    elif op == "join":
        net.departed.discard(nid)
        net.nodes[nid] = _fresh_node(nid, config)
    else:
        raise ConfigError("churn", f"unknown churn op {op!r}")


def _apply_churn(net, config, kind, nid, bootstrap, maint_rng, sched_rng, push, when) -> None:
    if kind == _E_LEAVE:
        apply_churn(net, "leave", nid, config)
        return
    apply_churn(net, "join", nid, config)
    rng_churn = _stream(config.seed, net.trial, _S_CHURN, nid)
    alive = [s for s in net.alive_servers() if s != nid]
    bootstrap[nid] = rng_churn.choice(alive) if alive else nid
    maint_rng[nid] = _stream(config.seed, net.trial, _S_MAINT, nid)
    for ek, tag, mean in (
        (_E_GOSSIP, _S_SCHED_GOSSIP, config.gossip_mean_s),
        (_E_MGMT, _S_SCHED_MGMT, config.ring_mgmt_mean_s),
        (_E_OVERSAMPLE, _S_SCHED_OVERSAMPLE, config.oversample_mean_s),
    ):
        if ek == _E_OVERSAMPLE and not (
            mean > 0 and config.algorithm in ("hybrid", "coordinate", "direct")
        ):
            continue
        sched_rng[(ek, nid)] = _stream(config.seed, net.trial, tag, nid)
        push(when + _exp(sched_rng[(ek, nid)], mean), ek, nid)


def _run_one_query(net, matrix, config, trial, qid, when, clients, rng_qpick):
    """Draw a (target, entry) pair, run the configured search, and build the record."""
    target = entry = None
    oracle = None
    for _ in range(32):
        target = clients[rng_qpick.randrange(len(clients))]
        alive = net.alive_servers()
        if not alive:
            return None, False
        entry = alive[rng_qpick.randrange(len(alive))]
        try:
            oracle = exact_nearest(matrix, alive, target, 1, config.oracle_direction)[0]
        except DelayDataError:
            continue
        break
    if oracle is None:
        return None, False
    rng_q = _stream(config.seed, trial, _S_QUERY_EXEC, qid)
    net.begin_query(rng_q)
    try:
        if config.algorithm == "vivaldi":
            outcome = _vivaldi_query(net, entry, target, config)
        else:
            msg = QueryMessage(
                target=target,
                origin=target,
                mode=Mode(config.mode),
                k=config.k,
                hop_budget=config.params.hop_cap,
            )
            outcome = run_query(net, entry, msg, algorithm=config.algorithm)
    finally:
        elapsed = net.query_elapsed
        qbytes = net.query_bytes
        qprobes = net.query_probes
        net.end_query()
    if outcome.result is None or not math.isfinite(outcome.result_delay):
        return None, False
    rec = QueryRecord(
        query_id=qid,
        trial=trial,
        algorithm=config.algorithm,
        target=target,
        entry=entry,
        returned=outcome.result,
        returned_delay=outcome.result_delay,
        oracle=oracle[0],
        oracle_delay=oracle[1],
        hops=outcome.hops,
        probes=qprobes,
        bytes=qbytes,
        sim_time=when + elapsed,
        forced=outcome.forced,
    )
    return rec, True


def _vivaldi_query(net: _TrialNet, entry: int, target: int, config: SimConfig):
    """Centralized-coordinates baseline: bootstrap a target coordinate from a
    handful of probes, then pick the server with the smallest estimate."""
    node = net.node(entry)
    rng = net.rng()
    probes = []
    if node is not None:
        entries = node.ring.all_entries()
        count = min(config.params.bootstrap_probes, len(entries))
        for e in rng.sample(entries, count) if count else []:
            dv = net.probe(e.neighbor, target)
            if dv is not None and e.coord is not None:
                probes.append((e.coord, dv))
                net.account("bootstrap_probe")
    if not probes:
        dv = net.probe(entry, target)
        if dv is None or node is None:
            return protocols.QueryOutcome(
                result=None, result_delay=math.inf, omega=[], omega_delays=[], path=[], hops=0
            )
        probes = [(node.coordinate, dv)]
    target_coord = localize_target(
        probes, config.params.vivaldi, max_probes=config.params.bootstrap_probes,
        tie_seed=rng.getrandbits(32),
    )
    coords = {sid: st.coordinate for sid, st in net.nodes.items()}
    servers = net.alive_servers()
    pick = vivaldi_centralized(coords, servers, target_coord)
    d = net.probe(pick, target)
    if d is None:
        measured = [(s, net.probe(s, target)) for s in servers]
        measured = [(s, v) for s, v in measured if v is not None]
        if not measured:
            return protocols.QueryOutcome(
                result=None, result_delay=math.inf, omega=[], omega_delays=[], path=[], hops=0
            )
        pick, d = min(measured, key=lambda sv: (sv[1], sv[0]))
    return protocols.QueryOutcome(
        result=pick, result_delay=d, omega=[pick], omega_delays=[d], path=[], hops=0
    )
