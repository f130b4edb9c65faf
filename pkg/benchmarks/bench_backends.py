"""Timing comparison of the numpy and numba kernel backends.

Generates a planted two-domain dataset, then times the three hot kernels
(tempered responsibilities, sufficient statistics, log-likelihood) and a
full training run per backend.  Run as:

    python benchmarks/bench_backends.py [--users 300] [--items 500]
        [--density 0.05] [-K 10] [-T 6] [-L 3] [--iters 5] [--threads N]
"""

import argparse
import time

import numpy as np

from pclf import ModelDims, SyntheticSpec, TrainConfig, synth_generate, train
from pclf import kernels
from pclf.em import _gathered_log_weights, _log, init_params


def build_inputs(args):
    dims = ModelDims(
        n_domains=2, n_user_clusters=args.user_clusters,
        n_common_clusters=args.common_clusters,
        n_specific_clusters=(args.specific_clusters,) * 2, n_levels=5,
        n_users=(args.users,) * 2, n_items=(args.items,) * 2,
    )
    spec = SyntheticSpec(dims=dims, w1=(0.7, 0.7), density=args.density, seed=0,
                         membership_concentration=0.06, rating_sharpness=3.5)
    dataset, _ = synth_generate(spec)
    params = init_params(dims, dataset, seed=0)
    gu, gv, r = dataset.pooled()
    ridx = (r - 1).astype(np.int64)
    log_wu = np.ascontiguousarray(
        (_log(params.prior_u)[:, None] + _log(params.cond_u))[:, gu].T
    )
    log_wv = _gathered_log_weights(params.prior_vcom, params.cond_vcom, gv)
    log_rate = _log(params.rate_com)
    return dataset, dims, (log_wu, log_wv, log_rate, ridx, gu, gv)


def time_call(fn, repeats):
    fn()  # warmup (pays JIT compilation for numba)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--users", type=int, default=300)
    parser.add_argument("--items", type=int, default=500)
    parser.add_argument("--density", type=float, default=0.05)
    parser.add_argument("-K", "--user-clusters", type=int, default=10)
    parser.add_argument("-T", "--common-clusters", type=int, default=6)
    parser.add_argument("-L", "--specific-clusters", type=int, default=3)
    parser.add_argument("--iters", type=int, default=5, help="timing repeats per kernel")
    parser.add_argument("--threads", type=int, default=1,
                        help="also time the parallel numba kernels with this many threads")
    args = parser.parse_args()

    dataset, dims, (log_wu, log_wv, log_rate, ridx, gu, gv) = build_inputs(args)
    s_total = len(ridx)
    print(f"dataset: {s_total} pooled triples, "
          f"K={dims.n_user_clusters} T={dims.n_common_clusters} "
          f"L={dims.n_specific_clusters[0]}")
    print(f"backends available: {', '.join(kernels.available_backends())}\n")

    rows = []
    for name in kernels.available_backends():
        impl = kernels.get_backend(name)
        resp = impl.pair_responsibilities(log_wu, log_wv, log_rate, ridx, 0.8)
        t_resp = time_call(
            lambda: impl.pair_responsibilities(log_wu, log_wv, log_rate, ridx, 0.8),
            args.iters,
        )
        t_stats = time_call(
            lambda: impl.pair_stats(resp, gu, gv, ridx,
                                    dims.total_users, dims.total_items, dims.n_levels),
            args.iters,
        )
        t_ll = time_call(
            lambda: impl.pair_log_likelihood(log_wu, log_wv, log_rate, ridx),
            args.iters,
        )
        rows.append((name, t_resp, t_stats, t_ll))

    if args.threads > 1 and "numba" in kernels.available_backends():
        impl = kernels.get_backend("numba")
        kernels.set_threads(args.threads)
        try:
            t_resp = time_call(
                lambda: impl.pair_responsibilities(log_wu, log_wv, log_rate, ridx, 0.8),
                args.iters,
            )
            t_ll = time_call(
                lambda: impl.pair_log_likelihood(log_wu, log_wv, log_rate, ridx),
                args.iters,
            )
            rows.append((f"numba x{args.threads}", t_resp, float("nan"), t_ll))
        finally:
            kernels.set_threads(1)

    header = f"{'backend':<12} {'responsibilities':>18} {'statistics':>12} {'loglik':>10}"
    print(header)
    print("-" * len(header))
    for name, t_resp, t_stats, t_ll in rows:
        print(f"{name:<12} {t_resp * 1e3:>15.2f} ms {t_stats * 1e3:>9.2f} ms "
              f"{t_ll * 1e3:>7.2f} ms")

    print("\nfull annealed training run (active backend: "
          f"{kernels.active_backend()}):")
    config = TrainConfig(beta_schedule=(0.5, 0.75, 1.0), max_iters_per_beta=15,
                         min_iters_per_beta=5, seed=0)
    t0 = time.perf_counter()
    _, trace = train(dataset, dims, config)
    print(f"  {len(trace)} iterations in {time.perf_counter() - t0:.2f}s, "
          f"final log-likelihood {trace[-1].log_likelihood:.1f}")


if __name__ == "__main__":
    main()
