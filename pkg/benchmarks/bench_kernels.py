"""Time WBP message passing with the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--frames 256] [--repeats 5]

Runs inference and one multi-loss gradient on the (128, 64) polar code with
five iterations, checks both back ends agree, and prints the best time of
each along with the speed-up.
"""

import argparse
import time

import numpy as np

from bayesrx import _kernels, polar, wbp


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=256)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels.numba_kernels is None:
        raise SystemExit("numba is not installed; nothing to compare")

    code = polar.build_polar_code(128, 64)
    graph = polar.tanner_graph(code)
    rng = np.random.default_rng(args.seed)
    msgs = rng.integers(0, 2, size=(args.frames, code.message_length)).astype(np.uint8)
    words = polar.encode(code, msgs)
    sigma = 0.8
    llr = np.clip(-2.0 * ((1.0 - 2.0 * words) + sigma * rng.standard_normal(words.shape)) / sigma ** 2, -15, 15)
    weights = 1.0 + 0.1 * rng.standard_normal((5, graph.edge_count))
    params = wbp.WbpParams(weights)

    rows = []
    for name, task in (
        ("inference", lambda k: wbp.wbp_infer(params, llr, graph, kernels=k)),
        ("gradient", lambda k: wbp.multiloss_grad(llr, words, graph, weights, kernels=k)),
    ):
        fast, slow = _kernels.numba_kernels, _kernels.numpy_kernels
        a, b = task(fast), task(slow)  # also warms up the jit cache
        if name == "gradient":
            a, b = a[1], b[1]
        err = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        t_fast = best_time(lambda: task(fast), args.repeats)
        t_slow = best_time(lambda: task(slow), args.repeats)
        rows.append((name, t_fast, t_slow, err))

    print(f"(128,64) polar, {graph.edge_count} edges, {args.frames} frames, 5 iterations")
    print(f"{'task':<10} {'numba ms':>10} {'numpy ms':>10} {'speed-up':>9} {'max diff':>10}")
    for name, t_fast, t_slow, err in rows:
        print(f"{name:<10} {t_fast * 1e3:10.2f} {t_slow * 1e3:10.2f} {t_slow / t_fast:9.1f} {err:10.1e}")


if __name__ == "__main__":
    main()
