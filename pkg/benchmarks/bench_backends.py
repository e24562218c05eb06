"""Time the numba kernels against their pure-numpy twins and check they agree.

    python3 benchmarks/bench_backends.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from epde import _accel, kernels
from epde.generators import ChafeeInfanteConfig, generate_ensemble, sample_parameters, solve_chafee_infante
from epde.questionnaire import hierarchical_cluster
from epde.vertex import energy, gradient, init_homogeneous


def cases():
    rng = np.random.default_rng(0)
    X = rng.random((400, 2000))
    D = kernels.pairwise_l1(rng.random((300, 50)))
    samples = sample_parameters(20, seed=0)
    s, p = init_homogeneous()
    return {
        "pairwise_l1 400x2000": lambda: kernels.pairwise_l1(X),
        "hierarchical_cluster n=300": lambda: hierarchical_cluster(D).levels[-2],
        "signal ensemble 20 samples": lambda: generate_ensemble(samples).values,
        "Chafee-Infante 101 nodes": lambda: solve_chafee_infante(ChafeeInfanteConfig()).values,
        "vertex energy+gradient x200": lambda: [(energy(s, p), gradient(s, p)) for _ in range(200)][-1][1],
    }


def _time(fn, repeat):
    fn()  # compile / warm caches
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _flat(x):
    return np.concatenate([np.ravel(np.asarray(v, dtype=np.float64)) for v in (x if isinstance(x, tuple) else (x,))])


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not installed")
    print(f"{'kernel':32s} {'numba s':>10s} {'numpy s':>10s} {'speedup':>8s}  max |diff|")
    for name, fn in cases().items():
        with _accel.use_backend("numba"):
            t_nb, a = _time(fn, args.repeat)
        with _accel.use_backend("numpy"):
            t_np, b = _time(fn, args.repeat)
        diff = float(np.max(np.abs(_flat(a) - _flat(b))))
        print(f"{name:32s} {t_nb:10.4f} {t_np:10.4f} {t_np / t_nb:8.1f}  {diff:.2e}")


if __name__ == "__main__":
    main()
