"""A small version of the litters sampler comparison.

Runs four algorithm arms on a reduced litters model (6 litters per group
instead of the benchmark's 16) with short segments, then prints the
comparison table. Expect a couple of minutes of runtime; the full desk
benchmark lives behind `adaptmcmc run --model litters`.

The qualitative picture to look for: the adaptive engine discovers that
the hyperparameter pairs mix badly one dimension at a time and replaces
their scalar samplers with small blocks, lifting worst-dimension
efficiency well above the all-scalar baseline.
"""

from adaptmcmc import ExperimentConfig, run_comparison


def main():
    config = ExperimentConfig(
        model="litters", size=6,
        algorithms=("all_scalar", "all_blocked", "default", "auto_adapt"),
        reps=3, max_outer=8, n_inner=3_000, n_warm=3_000, n_final=6_000,
        seed_base=5, time_source="cost")
    results = run_comparison(config)
    print(results.table.to_text())
    print("\nfinal kernels chosen by the adaptive arm:")
    for arm in results.arms:
        if arm.algorithm == "auto_adapt":
            print(f"  rep {arm.rep}: {arm.kernel}")


if __name__ == "__main__":
    main()
