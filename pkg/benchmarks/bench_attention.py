#!/usr/bin/env python3
"""Benchmark the compiled attention kernels against the numpy fallback.

Runs forward and backward passes over graphs shaped like the two training
adjacencies at benchmark scale (906 nodes: a top-7 similarity graph and a
sparse bipartite association graph) and at a denser synthetic setting,
then reports per-call times, the speedup, and the max deviation between
backends.

Usage: python benchmarks/bench_attention.py [--repeats N]
"""

import argparse
import time

import numpy as np

from dfdrnn import _np_kernels
from dfdrnn.kernels import CsrGraph

try:
    from dfdrnn import _attention_cy
except ImportError:
    _attention_cy = None


def topt_like_graph(n_nodes, degree, rng):
    lists = [
        np.sort(
            np.unique(
                np.append(rng.choice(n_nodes, size=degree, replace=False), i)
            )
        )
        for i, _ in enumerate(range(n_nodes))
    ]
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(lst) for lst in lists])
    return CsrGraph(indptr, np.concatenate(lists).astype(np.int64))


def bipartite_graph(n, m, n_edges, rng):
    pairs = rng.choice(n * m, size=n_edges, replace=False)
    drugs, diseases = pairs // m, pairs % m + n
    lists = [np.sort(diseases[drugs == i]) for i in range(n)]
    lists += [np.sort(drugs[diseases == n + j]) for j in range(m)]
    indptr = np.zeros(n + m + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(lst) for lst in lists])
    return CsrGraph(indptr, np.concatenate(lists).astype(np.int64))


def run_numpy(q, k, v, graph, heads, grad):
    out, beta = _np_kernels.attention_forward(q, k, v, graph, heads)
    grads = _np_kernels.attention_backward(q, k, v, graph, heads, beta, grad)
    return out, grads


def run_cython(q, k, v, graph, heads, grad):
    out, beta = _attention_cy.attention_forward(
        q, k, v, graph.indptr, graph.indices, heads
    )
    grads = _attention_cy.attention_backward(
        q, k, v, graph.indptr, graph.indices, heads, beta, grad
    )
    return out, grads


def time_call(fn, repeats, *args):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - start)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if _attention_cy is None:
        print("compiled extension not built; only the numpy fallback is available")
        return

    rng = np.random.default_rng(0)
    cases = [
        ("similarity top-7 (906 nodes)", topt_like_graph(906, 7, rng)),
        ("association bipartite (593x313, 1933 edges)", bipartite_graph(593, 313, 1933, rng)),
        ("dense neighborhood (906 nodes, deg 48)", topt_like_graph(906, 48, rng)),
    ]
    k, heads = 128, 2
    header = f"{'case':45s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s} {'max dev':>9s}"
    print(header)
    print("-" * len(header))
    for name, graph in cases:
        n = graph.n_nodes
        q, kk, v, grad = (
            np.ascontiguousarray(rng.normal(size=(n, k))) for _ in range(4)
        )
        t_np, (out_np, grads_np) = time_call(run_numpy, args.repeats, q, kk, v, graph, heads, grad)
        t_cy, (out_cy, grads_cy) = time_call(run_cython, args.repeats, q, kk, v, graph, heads, grad)
        deviation = max(
            np.abs(out_np - out_cy).max(),
            *(np.abs(a - b).max() for a, b in zip(grads_np, grads_cy)),
        )
        print(
            f"{name:45s} {t_np * 1e3:8.2f}ms {t_cy * 1e3:8.2f}ms "
            f"{t_np / t_cy:7.1f}x {deviation:9.1e}"
        )


if __name__ == "__main__":
    main()
