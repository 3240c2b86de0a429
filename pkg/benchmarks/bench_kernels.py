"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from lsdefect import _backend


def cases(rng: np.random.Generator) -> dict:
    xy = rng.uniform(0, 400, (300, 2))
    boxes = np.ascontiguousarray(np.hstack([xy, xy + rng.uniform(5, 60, (300, 2))]))
    scores = np.ascontiguousarray(rng.random(300))
    fm = np.ascontiguousarray(rng.normal(size=(8, 60, 60)))
    roi = np.array([3.3, 7.1, 41.9, 50.2])
    t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    xs = np.ascontiguousarray(240 + 200 * np.cos(t) * (1 + 0.2 * np.sin(5 * t)))
    ys = np.ascontiguousarray(240 + 200 * np.sin(t))
    mask = np.ascontiguousarray((rng.random((480, 480)) < 0.02).view(np.uint8))
    return {
        "box_iou_matrix 300x300": lambda k: k.box_iou_matrix(boxes, boxes),
        "nms 300 boxes": lambda k: k.nms(boxes, scores, 0.5),
        "roi_align 8ch 7x7 s2": lambda k: k.roi_align(fm, roi, 7, 7, 2),
        "roi_pool 8ch 7x7": lambda k: k.roi_pool(fm, roi, 7, 7),
        "rasterize 64-gon 480x480": lambda k: k.rasterize(xs, ys, 480, 480),
        "rle_encode 480x480": lambda k: k.rle_encode(mask if k is _backend.compiled_impl else mask.view(bool)),
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _backend.compiled_impl is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<28}{'numpy ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(rng).items():
        row = []
        for impl in (_backend.python_impl, _backend.compiled_impl):
            n, _ = timeit.Timer(lambda: fn(impl)).autorange()
            best = min(timeit.repeat(lambda: fn(impl), number=n, repeat=args.repeat)) / n
            row.append(best * 1e3)
        print(f"{name:<28}{row[0]:>12.3f}{row[1]:>12.3f}{row[0] / row[1]:>9.1f}x")


if __name__ == "__main__":
    main()
