"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the comparison does not depend on
``KERCNN_PURE_PYTHON``. Results are checked for agreement before timing.
"""
import argparse
import timeit

import numpy as np

from kercnn import _fallback

try:
    from kercnn import _ckernels
except ImportError:
    _ckernels = None


def roi_case(rng, boxes=64, size=14):
    fmap = rng.standard_normal((16, 32, 32))
    xy = rng.uniform(0, 24, (boxes, 2))
    wh = rng.uniform(2, 8, (boxes, 2))
    return (fmap, np.hstack([xy, wh]), size)


def match_case(rng, n=60):
    iou = rng.uniform(size=(n, n))
    iou[iou < 0.7] = 0.0
    return (iou,)


def bench(name, case, repeat):
    row = [name]
    slow = getattr(_fallback, name)
    want = slow(*case)
    t_py = min(timeit.repeat(lambda: slow(*case), number=1, repeat=repeat))
    row.append(t_py)
    if _ckernels is not None:
        fn = getattr(_ckernels, name)
        np.testing.assert_allclose(fn(*case), want, rtol=0, atol=1e-12)
        row.append(min(timeit.repeat(lambda: fn(*case), number=1, repeat=repeat)))
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    rows = [bench("roi_align_batch", roi_case(rng), args.repeat),
            bench("greedy_match", match_case(rng), args.repeat)]
    print(f"{'kernel':18s} {'python ms':>10s} {'compiled ms':>12s} {'speedup':>8s}")
    for row in rows:
        if len(row) == 3:
            print(f"{row[0]:18s} {row[1] * 1e3:10.3f} {row[2] * 1e3:12.3f} {row[1] / row[2]:7.1f}x")
        else:
            print(f"{row[0]:18s} {row[1] * 1e3:10.3f} {'n/a':>12s}")


if __name__ == "__main__":
    main()
