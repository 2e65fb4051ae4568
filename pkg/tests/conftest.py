"""Shared helpers: scripted networks with prefilled rings."""

import numpy as np
import pytest

from dnnsim.coordinates import Coordinate
from dnnsim.delay_space import DelayMatrix
from dnnsim.protocols import InMemoryNetwork, NodeState, ProtocolParams
from dnnsim.rings import ConcentricRing


def make_network(
    values,
    server_ids=None,
    params: ProtocolParams | None = None,
    coords: dict[int, Coordinate] | None = None,
    knowledge: dict[int, list[int]] | None = None,
    seed: int = 0,
    ring_kwargs: dict | None = None,
):
    """Build an InMemoryNetwork over an explicit matrix.

    ``knowledge`` maps a server to the neighbor ids preloaded into its ring
    (delays taken from the matrix, coordinates from ``coords``); by default
    every server knows every other server.  Coordinates default to exact
    5-D embeddings of nothing in particular: the zero vector.
    """
    m = DelayMatrix(np.array(values, dtype=float))
    params = params or ProtocolParams()
    server_ids = list(server_ids) if server_ids is not None else list(range(m.n))
    coords = coords or {}
    nodes = {}
    for sid in server_ids:
        ring = ConcentricRing(**(ring_kwargs or {}))
        nodes[sid] = NodeState(
            id=sid,
            coordinate=coords.get(sid, Coordinate.origin(params.vivaldi.dim, e=0.1)),
            ring=ring,
            params=params,
        )
    net = InMemoryNetwork(m, nodes, seed=seed)
    for sid in server_ids:
        known = knowledge.get(sid, [s for s in server_ids if s != sid]) if knowledge is not None \
            else [s for s in server_ids if s != sid]
        for nbr in known:
            d = m.delay(sid, nbr)
            if d is None or d <= 0 or nbr == sid:
                continue
            peer_coord = coords.get(nbr, Coordinate.origin(params.vivaldi.dim, e=0.1))
            nodes[sid].ring.observe(nbr, d, peer_coord, 20, now=0.0)
    return net


def embed_coords(points, e=0.05, dim=5):
    """Exact coordinates for a list of positions (padded to ``dim``)."""
    out = {}
    for nid, p in points.items():
        x = tuple(float(v) for v in p) + (0.0,) * (dim - len(p))
        out[nid] = Coordinate(x, e=e)
    return out


@pytest.fixture
def loose_params():
    """Params with pruning switched off for tiny scripted scenarios."""
    return ProtocolParams(tau=0, bootstrap_probes=10)
