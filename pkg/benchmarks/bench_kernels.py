"""Timing comparison of the compiled and numpy kernel backends.

Run as a script:

    python benchmarks/bench_kernels.py [--repeats 5]

Measures the hot kernels (patch convolution forward/backward, 2x2 max
pool) on shapes matching the toy and benchmark configurations, plus a
whole-model forward/backward, for whichever backends are available.
"""

import argparse
import importlib
import os
import subprocess
import sys
import time

import numpy as np

SHAPES = [
    # (label, batch, height, channels_in, channels_out, grid)
    ("backbone 16px g=8", 2, 16, 4, 1, 8),
    ("backbone 16px g=1", 2, 16, 4, 1, 1),
    ("backbone 32px g=4", 4, 32, 8, 2, 4),
    ("branch conv 8px", 4, 8, 24, 24, 1),
]


def bench_kernels(repeats):
    from aunet import kernels

    rng = np.random.default_rng(0)
    rows = []
    for label, b, side, cin, cout, g in SHAPES:
        x = rng.standard_normal((b, side, side, cin))
        w = rng.standard_normal((g, g, 3, 3, cin, cout))
        gy = rng.standard_normal((b, side, side, cout))

        def fwd():
            return kernels.patch_conv_forward(x, w)

        def bwd():
            return kernels.patch_conv_backward(x, w, gy)

        rows.append((f"patch_conv fwd {label}", time_call(fwd, repeats)))
        rows.append((f"patch_conv bwd {label}", time_call(bwd, repeats)))

    x = rng.standard_normal((4, 32, 32, 16))
    rows.append(("maxpool2 fwd 32px", time_call(
        lambda: kernels.maxpool2_forward(x), repeats)))
    return kernels.BACKEND, rows


def bench_model(repeats):
    from aunet.config import RunConfig
    from aunet.head import class_weights, detection_loss, total_loss
    from aunet.model import AuDetector

    cfg = RunConfig(l=32, c=2, n=3, T=5, crf={"w1": 0.005, "w2": 0.02})
    model = AuDetector(cfg)
    rng = np.random.default_rng(1)
    images = rng.uniform(0, 1, (2, 32, 32, 3))
    labels = rng.integers(0, 2, (2, 3))
    weights = np.ones(3)
    model.train()

    def step():
        model.zero_grad()
        out = model.forward(images)
        det = detection_loss(out.probs, labels, weights)
        total_loss(det, out.crf_energies, 1e-6).backward()

    step()  # warm the kernel cache
    return time_call(step, repeats)


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_backend(backend, repeats):
    """Re-exec this script pinned to one backend and parse its output."""
    env = dict(os.environ, AUNET_FORCE_BACKEND=backend)
    out = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--single",
         "--repeats", str(repeats)],
        env=env, capture_output=True, text=True,
    )
    if out.returncode != 0:
        return None
    return out.stdout


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--single", action="store_true",
                    help="benchmark only the already-selected backend")
    args = ap.parse_args()

    if args.single:
        backend, rows = bench_kernels(args.repeats)
        print(f"backend: {backend}")
        for label, seconds in rows:
            print(f"  {label:35s} {seconds * 1e3:8.3f} ms")
        print(f"  {'model fwd+bwd l=32 batch 2':35s} "
              f"{bench_model(max(2, args.repeats // 2)) * 1e3:8.3f} ms")
        return 0

    reports = {}
    for backend in ("native", "numpy"):
        text = run_backend(backend, args.repeats)
        if text is None:
            print(f"[{backend} backend unavailable, skipped]")
        else:
            reports[backend] = text
            print(text, end="")

    if len(reports) == 2:
        print("\nspeedup (numpy time / native time):")
        for left, right in zip(reports["native"].splitlines(),
                               reports["numpy"].splitlines()):
            if "ms" not in left:
                continue
            label = left.rsplit(None, 2)[0].strip()
            t_native = float(left.rsplit(None, 2)[1])
            t_numpy = float(right.rsplit(None, 2)[1])
            print(f"  {label:35s} {t_numpy / t_native:6.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
