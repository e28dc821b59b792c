"""Compare the compiled and pure-numpy kernel backends.

Times each primitive on the shapes the bundled conv net actually hits
(conv1: 1->16 channels on 28x28 inputs, conv2: 16->32 on the pooled
maps), checks the backends agree, and prints a table plus an end-to-end
attack-path figure.

Run: python3 benchmarks/bench_kernels.py [--batch 128] [--reps 5]
"""

import argparse
import time

import numpy as np

from boundarylab.kernels import pyref

try:
    from boundarylab.kernels import _native
except ImportError:
    _native = None


def _timed(fn, *args, reps):
    fn(*args)  # warm-up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps * 1e3


def _agree(a, b):
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-9, atol=1e-9)


def cases(batch, rng):
    # conv1 block: padded 28x28 single-channel input, 16 filters
    x1 = np.ascontiguousarray(rng.standard_normal((batch, 1, 30, 30)))
    w1 = np.ascontiguousarray(rng.standard_normal((16, 1, 3, 3)))
    b1 = np.ascontiguousarray(rng.standard_normal(16))
    g1 = np.ascontiguousarray(rng.standard_normal((batch, 16, 28, 28)))
    # conv2 block: padded 14x14 16-channel maps, 32 filters
    x2 = np.ascontiguousarray(rng.standard_normal((batch, 16, 16, 16)))
    w2 = np.ascontiguousarray(rng.standard_normal((32, 16, 3, 3)))
    b2 = np.ascontiguousarray(rng.standard_normal(32))
    g2 = np.ascontiguousarray(rng.standard_normal((batch, 32, 14, 14)))
    # pool on the widest map it sees
    xp = np.ascontiguousarray(rng.standard_normal((batch, 16, 28, 28)))
    _, idx = pyref.maxpool2_forward(xp)
    gp = np.ascontiguousarray(rng.standard_normal((batch, 16, 14, 14)))

    yield "conv1 forward", "conv2d_forward", (x1, w1, b1)
    yield "conv1 input-grad", "conv2d_input_grad", (g1, w1, 30, 30)
    yield "conv1 param-grad", "conv2d_param_grad", (x1, g1, 3, 3)
    yield "conv2 forward", "conv2d_forward", (x2, w2, b2)
    yield "conv2 input-grad", "conv2d_input_grad", (g2, w2, 16, 16)
    yield "conv2 param-grad", "conv2d_param_grad", (x2, g2, 3, 3)
    yield "maxpool forward", "maxpool2_forward", (xp,)
    yield "maxpool backward", "maxpool2_backward", (gp, idx, 28, 28)


ATTACK_PATH = ("conv1 forward", "conv2 forward", "maxpool forward",
               "maxpool backward", "conv1 input-grad", "conv2 input-grad")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--reps", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"batch={args.batch} reps={args.reps} "
          f"native_available={_native is not None}")
    header = f"{'primitive':<18} {'python ms':>10} {'native ms':>10} " \
             f"{'speedup':>8}  agree"
    print(header)
    print("-" * len(header))
    totals = {"python": 0.0, "native": 0.0}
    for label, fname, fargs in cases(args.batch, rng):
        tp = _timed(getattr(pyref, fname), *fargs, reps=args.reps)
        if _native is None:
            print(f"{label:<18} {tp:>10.2f} {'-':>10} {'-':>8}  -")
            continue
        tn = _timed(getattr(_native, fname), *fargs, reps=args.reps)
        ok = _agree(getattr(_native, fname)(*fargs),
                    getattr(pyref, fname)(*fargs))
        print(f"{label:<18} {tp:>10.2f} {tn:>10.2f} {tp / tn:>7.2f}x"
              f"  {ok}")
        if label in ATTACK_PATH:
            totals["python"] += tp
            totals["native"] += tn
    if _native is not None:
        print(
            f"\nattack path (forward + input-grad + pool): "
            f"python {totals['python']:.1f} ms, "
            f"native {totals['native']:.1f} ms "
            f"({totals['python'] / totals['native']:.2f}x)"
        )


if __name__ == "__main__":
    main()
