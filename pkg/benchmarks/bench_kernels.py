"""Time the hot kernels and one fused denoising pass on both backends.

    python benchmarks/bench_kernels.py [--height 240 --width 320 --repeat 3 --threads 1]

Prints one row per kernel with the best-of-N time per backend and the speedup.
"""
import argparse
import timeit

import numpy as np

from tofgraph import kernels
from tofgraph.imaging import SensorModel
from tofgraph.noise import NoiseSpec
from tofgraph.pipeline import GraphConfig, denoise_frame
from tofgraph.scene import default_sequence_inputs, mean_gamma_sigma, synth_sequence
from tofgraph.solver import SolverConfig


def kernel_cases(h, w, q=7, c=27, seed=0):
    rng = np.random.default_rng(seed)
    w4 = rng.random((4, h, w))
    for k, (dy, dx) in enumerate(kernels.EDGE_OFFSETS):
        w4[k] *= kernels.shifted(np.ones((h, w)), dy, dx)
    x, lam = rng.random((h, w)), rng.random((h, w))
    deg = kernels.degree(w4)
    qf, kf = rng.random((h, w, c)), rng.random((h, w, c))
    a = rng.random((q * q, h, w))
    a /= a.sum(axis=0)
    return {
        "degree": (w4,),
        "adjacency_apply": (w4, x),
        "unrolled_iterations": (x, lam, w4, deg, 3),
        "attention_scores": (qf, kf, q),
        "min_feature_distance": (qf, kf, q),
        "map_graph": (a, w4, q),
    }


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--width", type=int, default=320)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    kernels.set_num_threads(args.threads)
    backends = kernels.available_backends()
    print(f"{args.height}x{args.width}, threads={args.threads}, backends={backends}")
    print(f"{'kernel':24s}" + "".join(f"{b:>12s}" for b in backends) + "   speedup")

    def row(name, fn):
        times = {}
        for b in backends:
            with kernels.use_backend(b):
                times[b] = best(fn, args.repeat)
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:24s}" + "".join(f"{times[b]:12.4f}" for b in backends) + f"   {speed:7.1f}x")

    for name, case in kernel_cases(args.height, args.width).items():
        row(name, lambda name=name, case=case: getattr(kernels, name)(*case))

    model = SensorModel()
    scene, path = default_sequence_inputs(args.width, args.height, 2)
    seq = synth_sequence(scene, path, model, NoiseSpec(mean_gamma_sigma(scene, path, model, 0.05), 1))
    row("denoise_frame (fused)", lambda: denoise_frame(seq.noisy[1], seq.noisy[0], model, GraphConfig(),
                                                      SolverConfig(), "fused"))


if __name__ == "__main__":
    main()
