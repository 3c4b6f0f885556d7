"""Compare the compiled kernels with the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the median wall time per call for each kernel and backend, plus the
speed-up. Both backends must be importable (build the extension first with
``pip install -e . --no-build-isolation``).
"""
import argparse
import statistics
import time

import numpy as np

from gaitgender import _kernels_py

try:
    from gaitgender import _ckernels
except ImportError:
    _ckernels = None


def make_inputs(rng):
    seq = rng.normal(0, 50, size=(300, 17, 3)) + 300
    seq[:, :, 2] = rng.uniform(0.5, 1, size=(300, 17))
    valid = rng.random(300) > 0.1
    valid[0] = True
    anchors = _kernels_py.frame_anchors(seq)
    vecs = rng.normal(size=(1000, 82))
    vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)
    return {
        "frame_anchors (300x17)": ("frame_anchors", (seq,)),
        "apply_anchors (300x17)": ("apply_anchors", (seq, anchors, 1e-6)),
        "fill_gaps (300x17)": ("fill_gaps", (seq, valid)),
        "resample_linear (300->60)": ("resample_linear", (seq, 60)),
        "knn_cosine (1000x82, k=20)": ("knn_cosine", (vecs, 20)),
    }


def timeit(fn, args, repeat):
    fn(*args)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return statistics.median(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        raise SystemExit("compiled extension not built; nothing to compare")
    inputs = make_inputs(np.random.default_rng(0))
    print(f"{'kernel':30s} {'python ms':>10s} {'cython ms':>10s} {'speed-up':>9s}")
    for label, (name, fargs) in inputs.items():
        tp = timeit(getattr(_kernels_py, name), fargs, args.repeat)
        tc = timeit(getattr(_ckernels, name), fargs, args.repeat)
        print(f"{label:30s} {1e3 * tp:10.3f} {1e3 * tc:10.3f} {tp / tc:8.1f}x")


if __name__ == "__main__":
    main()
