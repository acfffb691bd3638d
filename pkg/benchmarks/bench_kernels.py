"""Time the likelihood kernels under both backends.

Each backend runs in its own interpreter because the choice is fixed at
import time (``HMCTREE_DISABLE_NUMBA``). Usage::

    python3 benchmarks/bench_kernels.py [--repeat 200] [--json out.json]
"""

import argparse
import json
import os
import subprocess
import sys
import time

CASES = [
    # (label, N, internal nodes, task)
    ("regression N=100 n=3", 100, 3, "regression"),
    ("regression N=800 n=5", 800, 5, "regression"),
    ("regression N=5000 n=10", 5000, 10, "regression"),
    ("classification N=800 n=5 M=3", 800, 5, "classification"),
    ("classification N=5000 n=10 M=3", 5000, 10, "classification"),
]


def _worker(repeat):
    import numpy as np

    from hmctree import kernels
    from hmctree.gradcheck import random_topology
    from hmctree.model import compile_tree

    rng = np.random.default_rng(0)
    out = {"backend": kernels.BACKEND, "cases": {}}
    for label, N, n, task in CASES:
        topo = random_topology(n, rng)
        ct = compile_tree(topo)
        Z = rng.normal(0.0, 20.0, size=(N, n))
        if task == "regression":
            mu = rng.normal(size=topo.n_leaves)
            y = rng.normal(size=N)

            def call(want_grad):
                return kernels.regression_loglik(Z, ct.path_idx, ct.path_dir, mu, y, 0.5, want_grad)
        else:
            labels = rng.integers(0, 3, size=N)
            alpha = np.ones(3)

            def call(want_grad):
                return kernels.classification_loglik(Z, ct.path_idx, ct.path_dir, labels, alpha, want_grad)

        call(True)  # compile / warm caches
        timings = {}
        for want_grad in (False, True):
            t0 = time.perf_counter()
            for _ in range(repeat):
                call(want_grad)
            timings["value+grad" if want_grad else "value"] = (time.perf_counter() - t0) / repeat * 1e6
        out["cases"][label] = timings
    return out


def _run_backend(disable, repeat):
    env = dict(os.environ)
    if disable:
        env["HMCTREE_DISABLE_NUMBA"] = "1"
    else:
        env.pop("HMCTREE_DISABLE_NUMBA", None)
    proc = subprocess.run(
        [sys.executable, __file__, "--worker", "--repeat", str(repeat)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--json", help="also write the raw timings here")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args()
    if args.worker:
        print(json.dumps(_worker(args.repeat)))
        return

    fast = _run_backend(False, args.repeat)
    slow = _run_backend(True, args.repeat)
    print(f"{'case':34s}{'mode':12s}{slow['backend']:>12s}{fast['backend']:>12s}{'speedup':>10s}")
    for label, *_ in CASES:
        for mode in ("value", "value+grad"):
            a = slow["cases"][label][mode]
            b = fast["cases"][label][mode]
            print(f"{label:34s}{mode:12s}{a:10.1f}us{b:10.1f}us{a / b:9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numpy": slow, "numba": fast}, fh, indent=2)


if __name__ == "__main__":
    main()
