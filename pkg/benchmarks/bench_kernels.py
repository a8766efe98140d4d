"""Compare the compiled and pure-python convolution backends.

Times each kernel and a full forward+backward training step of the
full-size Conformer, then checks both backends agree.

    python3 benchmarks/bench_kernels.py [--repeat N] [--frames T]
"""

import argparse
import time

import numpy as np

from eend_lab.encoder.config import conformer_default, toy_config
from eend_lab.encoder.model import backward, forward
from eend_lab.encoder.params import init_params
from eend_lab.numerics import kernels
from eend_lab.numerics.rng import Rng


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _normal(rng, shape):
    return rng.normal_array(int(np.prod(shape))).reshape(shape)


def kernel_cases(frames):
    rng = Rng(0)
    x1 = _normal(rng, (frames // 10, 256))
    w1 = _normal(rng, (32, 256))
    dy1 = _normal(rng, x1.shape)
    xp = _normal(rng, (frames // 2 + 6, 29, 256))
    w2 = _normal(rng, (7, 7, 256))
    n_t, n_f = (xp.shape[0] - 7) // 5 + 1, xp.shape[1] - 6
    dy2 = _normal(rng, (n_t, n_f, 256))
    return {
        "dwconv1d_forward": lambda k: k.dwconv1d_forward(x1, w1, 15),
        "dwconv1d_backward": lambda k: k.dwconv1d_backward(dy1, x1, w1, 15),
        "dwconv2d_forward": lambda k: k.dwconv2d_forward(xp, w2, 5, 1, n_t, n_f),
        "dwconv2d_backward": lambda k: k.dwconv2d_backward(dy2, xp, w2, 5, 1),
    }


def model_step(cfg, frames):
    params = init_params(cfg, 0)
    x = _normal(Rng(1), (frames, cfg.input_dims))

    def step():
        z, cache = forward(x, params, return_cache=True)
        grads = backward(cache, params, np.ones_like(z.values))
        return (z.values,) + tuple(grads.values())

    return step


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--frames", type=int, default=1000, help="input frames (10 ms each)")
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    print("case\t" + "\t".join(f"{b}_s" for b in backends) + "\tspeedup\tmax_abs_diff")

    for name, fn in kernel_cases(args.frames).items():
        results = {b: fn(kernels.get(b)) for b in backends}
        times = [best_of(lambda b=b: fn(kernels.get(b)), args.repeat) for b in backends]
        _report(name, times, results)

    for label, cfg in (("toy_step", toy_config("conformer")), ("conformer_step", conformer_default())):
        step = model_step(cfg, args.frames)
        times, results = [], {}
        previous = kernels.BACKEND
        for b in backends:
            kernels.set_backend(b)
            results[b] = step()
            times.append(best_of(step, args.repeat))
        kernels.set_backend(previous)
        _report(label, times, results)


def _report(name, times, results):
    outs = [r if isinstance(r, tuple) else (r,) for r in results.values()]
    diff = 0.0
    if len(outs) == 2:
        diff = max(float(np.max(np.abs(a - b))) for a, b in zip(*outs))
    speedup = times[-1] / times[0] if len(times) == 2 else 1.0
    cols = "\t".join(f"{t:.4f}" for t in times)
    print(f"{name}\t{cols}\t{speedup:.1f}x\t{diff:.1e}")


if __name__ == "__main__":
    main()
