"""Per-iteration cost against M*N for the approximate-gradient solvers.

    python demos/scaling.py
"""

from psr_gmti.harness import benchmark_scaling


def main():
    # M*N from ~3e6 to ~24e6, the range used by the acceptance test
    sizes = [(49, 60000), (49, 120000), (49, 240000), (49, 480000)]
    res = benchmark_scaling(sizes, iterations=5, repeats=2)
    for row in res.rows:
        print(f"{row['solver']:9s} M*N = {row['MN']:>9,d}: {1e3 * row['median_iter_s']:7.2f} ms/iteration")
    for name, slope in res.slopes.items():
        print(f"{name:9s} log-log slope {slope:.2f}")


if __name__ == "__main__":
    main()
