"""Compare the compiled and numpy kernel backends.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 50] [--train-steps 5]

Part one times each kernel directly from both modules. Part two times
full training steps in fresh interpreters, once per backend, selecting
the fallback with ``USTRA_PURE_PYTHON=1``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from ustra._kernels import _pykernels

try:
    from ustra._kernels import _ckernels
except ImportError:
    _ckernels = None

STEP_SCRIPT = """
import time, numpy as np
from ustra import _kernels, autodiff as ad
from ustra.config import TrainConfig
from ustra.data import ScenarioConfig, generate_synthetic
from ustra.model import init_params, make_batch
from ustra.config import ModelConfig
from ustra.training import batch_objective
videos = generate_synthetic(ScenarioConfig(num_pos=5, num_neg=5, T=50, N=5, seed=0))
cfg = TrainConfig(hidden_dim={hidden})
mcfg = ModelConfig.for_data(videos[0], cfg)
params = init_params(mcfg, np.random.default_rng(0))
batch = make_batch(videos)
best = float("inf")
for i in range({steps}):
    t = time.perf_counter()
    tape = ad.Tape()
    P = {{k: tape.variable(v) for k, v in params.items()}}
    total, _ = batch_objective(tape, P, batch, mcfg, cfg, np.random.default_rng(i))
    tape.backward(total)
    best = min(best, time.perf_counter() - t)
print(_kernels.BACKEND, best)
"""


def _cases(rng):
    n, d, h = 50, 64, 32
    A = rng.random((n, n))
    A /= A.sum()
    X = rng.standard_normal((n, d))
    W = rng.standard_normal((d, h))
    b = rng.standard_normal(h)
    out = _pykernels.graph_conv_forward(A, X, W, b, 1)
    gout = rng.standard_normal(out.shape)
    seg = rng.standard_normal((500, h))
    sm = rng.standard_normal((50, 50))
    z, hh, c = (rng.random((n, h)) for _ in range(3))
    return {
        "graph_conv_forward": lambda K: K.graph_conv_forward(A, X, W, b, 1),
        "graph_conv_backward": lambda K: K.graph_conv_backward(A, X, W, out, gout, 1),
        "segment_max_forward": lambda K: K.segment_max_forward(seg, 5),
        "softmax_rows": lambda K: K.softmax_rows(sm),
        "gated_update_forward": lambda K: K.gated_update_forward(z, hh, c),
        "gated_update_backward": lambda K: K.gated_update_backward(z, hh, c, gout),
    }


def bench_kernels(repeat):
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in _cases(rng).items():
        py = min(timeit.repeat(lambda: fn(_pykernels), number=repeat, repeat=3)) / repeat
        cy = None
        if _ckernels is not None:
            cy = min(timeit.repeat(lambda: fn(_ckernels), number=repeat, repeat=3)) / repeat
        rows.append((name, py, cy))
    return rows


def bench_training(steps, hidden):
    out = {}
    for label, env_extra in (("cython", {}), ("python", {"USTRA_PURE_PYTHON": "1"})):
        env = {**os.environ, **env_extra}
        if not env_extra:
            env.pop("USTRA_PURE_PYTHON", None)
        res = subprocess.run(
            [sys.executable, "-c", STEP_SCRIPT.format(steps=steps, hidden=hidden)],
            env=env, capture_output=True, text=True, check=True,
        )
        backend, seconds = res.stdout.split()
        out[label] = (backend, float(seconds))
    return out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=200)
    p.add_argument("--train-steps", type=int, default=5)
    p.add_argument("--hidden-dim", type=int, default=32)
    args = p.parse_args()

    print(f"{'kernel':<24}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for name, py, cy in bench_kernels(args.repeat):
        cy_s = f"{cy * 1e6:14.1f}" if cy is not None else f"{'n/a':>14}"
        sp = f"{py / cy:10.2f}" if cy else f"{'n/a':>10}"
        print(f"{name:<24}{py * 1e6:14.1f}{cy_s}{sp}")

    print(f"\ntraining step (batch of 10 videos, T=50, N=5, h={args.hidden_dim}), best of {args.train_steps}")
    res = bench_training(args.train_steps, args.hidden_dim)
    for label, (backend, seconds) in res.items():
        print(f"  requested {label:<7} loaded {backend:<7} {seconds * 1e3:9.1f} ms")
    if res["cython"][0] == "cython":
        print(f"  speedup {res['python'][1] / res['cython'][1]:.2f}x")


if __name__ == "__main__":
    main()
