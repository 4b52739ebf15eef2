"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--batch 16] [--size 48] [--channels 32] [--repeat 5]

Shapes default to one DiffNet training batch at desk scale (16 images of
48x48, 32 hidden channels). Reports the best of ``--repeat`` timings per
kernel and the speedup of the compiled extension.
"""

import argparse
import timeit

import numpy as np

from diffnet_lab import kernels


def cases(batch, size, channels, dtype):
    rng = np.random.default_rng(0)
    u = rng.normal(size=(batch, size, size)).astype(dtype)
    planes = rng.normal(size=(batch, size, size, 5)).astype(dtype)
    g = rng.normal(size=(batch, size, size)).astype(dtype)
    x = rng.normal(size=(batch, size, size, channels)).astype(dtype)
    cols = rng.normal(size=(batch * size * size, 9 * channels)).astype(dtype)
    return {
        "stencil_forward": lambda k: k.stencil_forward(u, planes),
        "stencil_backward": lambda k: k.stencil_backward(u, planes, g),
        "im2col3x3": lambda k: k.im2col3x3(x),
        "col2im3x3": lambda k: k.col2im3x3(cols, x.shape),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--size", type=int, default=48)
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")
    args = p.parse_args(argv)

    available = kernels.backends()
    names = sorted(available)
    print(f"backends: {', '.join(names)} (active: {kernels.BACKEND})")
    print(f"shape: batch {args.batch}, {args.size}x{args.size}, {args.channels} channels, {args.dtype}")
    print(f"{'kernel':<18}" + "".join(f"{n + ' ms':>14}" for n in names) + f"{'speedup':>10}")
    for name, fn in cases(args.batch, args.size, args.channels, np.dtype(args.dtype)).items():
        times = {}
        for backend in names:
            k = available[backend]
            fn(k)  # warm up
            times[backend] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat)) * 1e3
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{name:<18}" + "".join(f"{times[n]:>14.2f}" for n in names) + f"{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
