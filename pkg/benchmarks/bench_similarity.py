"""Time the LCS similarity kernel: numba vs the pure-numpy fallback.

    python3 benchmarks/bench_similarity.py [--sizes 50,200,800] [--repeat 20]

Token lists mimic HTML pages: a shared skeleton with a few edited positions,
which is the shape the detector compares all day.
"""
import argparse
import random
import time

from sqlforge._accel import HAVE_NUMBA
from sqlforge.similarity import encode_pair, _lcs_length_jit, _lcs_length_numpy


def page_pair(n, rng):
    vocab = [f"<tok{i}>" for i in range(200)]
    a = [rng.choice(vocab) for _ in range(n)]
    b = list(a)
    for _ in range(max(1, n // 20)):
        b[rng.randrange(n)] = rng.choice(vocab)
    return encode_pair(a, b)


def best_of(fn, ea, eb, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(ea, eb)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="50,200,800,2000")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = random.Random(0)

    if HAVE_NUMBA:
        ea, eb = page_pair(10, rng)
        _lcs_length_jit(ea, eb)  # compile outside the timed region
    else:
        print("numba unavailable (or SQLFORGE_NUMBA=0); timing numpy only")

    print(f"{'tokens':>7} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for n in (int(s) for s in args.sizes.split(",")):
        ea, eb = page_pair(n, rng)
        t_np = best_of(_lcs_length_numpy, ea, eb, args.repeat)
        if HAVE_NUMBA:
            assert _lcs_length_jit(ea, eb) == _lcs_length_numpy(ea, eb)
            t_nb = best_of(_lcs_length_jit, ea, eb, args.repeat)
            print(f"{n:>7} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.1f}x")
        else:
            print(f"{n:>7} {t_np * 1e3:>10.3f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
