"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 32]

Kernel timings call both backends in one process through
``kernels.NUMBA_KERNELS`` / ``kernels.NUMPY_KERNELS``. The full training step
runs once per backend in a subprocess, because the backend is chosen at import
time from ``CONXNET_DISABLE_NUMBA``.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from conxnet import kernels

STEP_SCRIPT = """
import json, sys, timeit
import numpy as np
from conxnet import model as M
from conxnet.optim import Adam, bce_loss
batch, repeat = int(sys.argv[1]), int(sys.argv[2])
net = M.build(M.ModelConfig())
rng = np.random.default_rng(0)
x = rng.random((batch, 1, 64, 64)).astype(np.float32)
t = (rng.random((batch, 1)) < 0.5).astype(np.float32)
opt = Adam()
def step():
    lv = bce_loss(net.forward(x), t)
    net.backward(lv.grad)
    opt.step(net.parameters(), net.gradients())
step()
print(json.dumps(min(timeit.repeat(step, number=1, repeat=repeat))))
"""


def cases(batch, rng):
    f32 = np.float32
    x = rng.random((batch, 16, 32, 32)).astype(f32)
    w = (rng.standard_normal((32, 16, 3, 3)) * 0.1).astype(f32)
    b = np.zeros(32, f32)
    g = rng.standard_normal((batch, 32, 32, 32)).astype(f32)
    p = rng.random((batch, 16, 64, 64)).astype(f32)
    _, arg = kernels.NUMPY_KERNELS["maxpool2d_forward"](p, 2, 2)
    gp = rng.standard_normal(arg.shape).astype(f32)
    a, m = rng.random((batch, 2048)).astype(f32), rng.random((2048, 64)).astype(f32)
    return [
        ("conv2d_forward", "conv2d_forward", (x, w, b, 1, 1), f"x{x.shape} w{w.shape}"),
        ("conv2d_backward", "conv2d_backward", (x, w, g, 1, 1), f"x{x.shape} w{w.shape}"),
        ("maxpool2d_forward", "maxpool2d_forward", (p, 2, 2), f"x{p.shape}"),
        ("maxpool2d_backward", "maxpool2d_backward", (gp, arg, p.shape), f"g{gp.shape}"),
        ("matmul", "matmul", (a, m), f"{a.shape}x{m.shape}"),
    ]


def best(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile for numba)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def train_step(disable_numba, batch, repeat):
    env = dict(os.environ, CONXNET_DISABLE_NUMBA="1" if disable_numba else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SCRIPT, str(batch), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--skip-step", action="store_true", help="skip the full training-step timing")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = []
    for label, key, fargs, shape in cases(args.batch, rng):
        t_nb = best(kernels.NUMBA_KERNELS[key], fargs, args.repeat)
        t_np = best(kernels.NUMPY_KERNELS[key], fargs, args.repeat)
        rows.append((label, shape, t_nb, t_np))
    if not args.skip_step:
        rows.append(("train step (64x64)", f"batch {args.batch}",
                     train_step(False, args.batch, args.repeat), train_step(True, args.batch, args.repeat)))

    print(f"{'kernel':<20} {'shape':<34} {'numba ms':>10} {'numpy ms':>10} {'speed-up':>9}")
    for label, shape, t_nb, t_np in rows:
        print(f"{label:<20} {shape:<34} {t_nb * 1e3:>10.2f} {t_np * 1e3:>10.2f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
