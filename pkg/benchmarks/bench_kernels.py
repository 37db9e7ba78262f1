"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--length 20000] [--repeats 3]

Each row runs the same call under both backends and reports the best wall
time of ``--repeats`` runs, the speedup and the largest loglik disagreement.
"""

import argparse
import time

import numpy as np

from chmm import kernels
from chmm.datasets import ToyFsmParams, toy_generate
from chmm.dense import dense_init
from chmm.inference import forward, viterbi
from chmm.learning import OnlineEM, OnlineEmConfig, e_step
from chmm.model import CloneLayout, init_random


def best_of(fn, repeats):
    best, out = np.inf, None
    for _ in range(repeats):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(length):
    seq = toy_generate(ToyFsmParams(k=3, seed=0), length - length % 9)
    E = int(seq.max()) + 1
    small = init_random(CloneLayout.uniform(E, 2), 0)
    large = init_random(CloneLayout.uniform(E, 20), 0)
    hmm = dense_init(24, E, 0)
    runner_cfg = OnlineEmConfig(batch_size=400)
    return [
        ("forward, 2 clones", lambda: forward(small, seq).loglik),
        ("forward, 20 clones", lambda: forward(large, seq).loglik),
        ("e_step, 20 clones", lambda: e_step(large, seq)[1]),
        ("viterbi, 20 clones", lambda: viterbi(large, seq).log_score),
        ("online epoch, 20 clones", lambda: _epoch(large, runner_cfg, seq)),
        ("dense loglik, H=24", lambda: hmm.log_likelihood(seq)),
    ]


def _epoch(model, cfg, seq):
    model = OnlineEM(model, cfg).run_epoch([seq])
    return forward(model, seq).loglik


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--length", type=int, default=20000)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled backend unavailable; only the fallback can be timed")
    prev = kernels.BACKEND
    print(f"{'case':<26}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'max |dLL|':>12}")
    try:
        for name, fn in cases(args.length):
            times, vals = [], []
            for b in backends:
                kernels.use_backend(b)
                t, v = best_of(fn, args.repeats)
                times.append(t)
                vals.append(v)
            speed = times[-1] / times[0] if len(times) > 1 else 1.0
            diff = max(abs(v - vals[0]) for v in vals)
            print(f"{name:<26}" + "".join(f"{t:>11.3f}s" for t in times) + f"{speed:>9.1f}x{diff:>12.1e}")
    finally:
        kernels.use_backend(prev)


if __name__ == "__main__":
    main()
