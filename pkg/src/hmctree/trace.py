"""JSON-lines chain traces.

One record per iteration. Floats are written with ``repr`` precision, so
parsing a trace gives back bit-identical parameter values.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import IO, Iterator

import numpy as np

from .model import TreeParams
from .rjsampler import ChainSample
from .topology import TreeTopology

__all__ = ["sample_to_record", "record_to_sample", "TraceWriter", "read_trace"]


def _tree_record(topo: TreeTopology, params: TreeParams) -> dict:
    def annotate(nid: int) -> dict:
        if topo.is_leaf(nid):
            return {"mu": params.mu[nid]} if nid in params.mu else {}
        out = {"threshold": params.tau[nid]}
        if params.variant == "DF":
            out["split_dim"] = params.kappa[nid]
        else:
            out["simplex"] = [float(v) for v in params.delta[nid]]
        return out

    return topo.to_record(annotate)


def sample_to_record(s: ChainSample) -> dict:
    return {
        "iteration": s.iteration,
        "phase": s.phase,
        "move": s.move,
        "requested_move": s.requested_move,
        "accepted": bool(s.accepted),
        "accept_prob": float(s.accept_prob),
        "logpost": float(s.logpost),
        "h": float(s.h),
        "n_leaves": s.topo.n_leaves,
        "step_size": float(s.step_size),
        "n_divergent": int(s.n_divergent),
        "n_leapfrog": int(s.n_leapfrog),
        "variant": s.params.variant,
        "sigma": None if s.params.sigma is None else float(s.params.sigma),
        "next_id": s.topo.next_id,
        "tree": _tree_record(s.topo, s.params),
    }


def record_to_sample(rec: dict) -> ChainSample:
    topo = TreeTopology.from_record(rec["tree"], rec["next_id"])
    params = TreeParams(rec["variant"], sigma=rec["sigma"])
    stack = [rec["tree"]]
    while stack:
        node = stack.pop()
        nid = int(node["id"])
        if "children" in node:
            params.tau[nid] = node["threshold"]
            if params.variant == "DF":
                params.kappa[nid] = int(node["split_dim"])
            else:
                params.delta[nid] = np.asarray(node["simplex"], dtype=float)
            stack.extend(node["children"])
        elif "mu" in node:
            params.mu[nid] = node["mu"]
    return ChainSample(
        rec["iteration"], topo, params, rec["logpost"], rec["move"], rec["accepted"], rec["phase"],
        rec["h"], rec["accept_prob"], rec["requested_move"], rec["n_divergent"], rec["n_leapfrog"],
        rec["step_size"],
    )


class TraceWriter:
    """Append-only JSON-lines writer, flushed after every record."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh: IO[str] = open(self.path, "w", encoding="utf-8")

    def __call__(self, sample: ChainSample) -> None:
        self._fh.write(json.dumps(sample_to_record(sample), allow_nan=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iter_trace(path) -> Iterator[ChainSample]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield record_to_sample(json.loads(line))


def read_trace(path) -> list[ChainSample]:
    return list(iter_trace(path))
