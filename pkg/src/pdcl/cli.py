"""Command-line entry points.

Verbs:
    run                 execute an experiment config over its seeds
    ablate-eps          sweep the forgetting-tolerance factor
    verify-sensitivity  run the convex sensitivity checks
    bench-partition     cross-check the partition solver against brute force

Every verb exits 0 iff all of its assertions pass.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from pdcl import buffer as buf
from pdcl import sensitivity as sens
from pdcl.experiment import ExperimentConfig, final_metrics, run_all_seeds, tolerance_ablation


@click.group()
def main():
    """Primal-dual continual learning experiment runner."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None, help="run a single seed instead of all")
@click.option("--out", "out_root", type=click.Path(), default=None)
def run(config_path, seed, out_root):
    """Run the configured method over the task stream."""
    config = ExperimentConfig.from_json(config_path)
    if seed is not None:
        config.seeds = (seed,)
    out_root = Path(out_root) if out_root is not None else Path(config.out_dir)
    results = run_all_seeds(config, out_root)
    for result in results:
        for mode in ("CIL", "TIL"):
            acc, forget = final_metrics(result.accuracy[mode])
            click.echo(
                f"seed={result.seed} mode={mode} "
                f"final_avg_accuracy={acc:.4f} avg_forgetting={forget:.4f}"
            )


@main.command("ablate-eps")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--factors", required=True, help="comma-separated factors, e.g. 1.05,1.15,1.25")
@click.option("--out", "out_root", type=click.Path(), default=None)
def ablate_eps(config_path, factors, out_root):
    """Sweep the forgetting-tolerance factor and report final error."""
    config = ExperimentConfig.from_json(config_path)
    grid = [float(f) for f in factors.split(",")]
    out_root = Path(out_root) if out_root is not None else Path(config.out_dir) / "ablation"
    rows = tolerance_ablation(config, grid, out_root)
    for factor, seed, mode, acc, err in rows:
        click.echo(f"factor={factor:g} seed={seed} mode={mode} final_error={err:.4f}")


@main.command("verify-sensitivity")
@click.option("--n-problems", type=int, default=50)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", type=click.Path(), default=None)
def verify_sensitivity(n_problems, seed, out_path):
    """Check the linear under-estimator and multiplier slopes on random
    convex problems plus the fixed closed-form 1-D case."""
    failures = 0

    # 1-D case with known solution: x*=0, P*=1, lam*=1 at eps=1.
    fixed = sens.ConvexProblem(
        A=np.array([[1.0]]),
        a=np.array([1.0]),
        constraints=[sens.QuadConstraint(B=np.array([[1.0]]), b=np.array([-1.0]), eps=1.0)],
    )
    sol = sens.solve_oracle(fixed)
    ok = abs(sol.value - 1.0) < 1e-8 and abs(sol.lam[0] - 1.0) < 1e-6
    click.echo(f"fixed 1-D case: P*={sol.value:.8f} lambda*={sol.lam[0]:.8f} pass={ok}")
    failures += 0 if ok else 1

    rng = np.random.default_rng(seed)
    gammas = np.array([-0.05, -0.02, 0.0, 0.02, 0.05, 0.2, 0.5])
    if out_path is not None:
        Path(out_path).write_text("problem_id,k,gamma,lhs,rhs,pass\n", encoding="utf-8")
    for pid in range(n_problems):
        problem = random_convex_problem(rng)
        for k in range(len(problem.constraints)):
            report = sens.check_sensitivity(problem, k, gammas)
            if out_path is not None:
                sens.write_report_csv(out_path, pid, k, report)
            if not report.all_passed:
                failures += 1
                click.echo(f"FAIL problem={pid} constraint={k}")

    click.echo(f"{n_problems} random problems checked; failures={failures}")
    sys.exit(0 if failures == 0 else 1)


def random_convex_problem(rng, max_dim: int = 3, max_constraints: int = 2):
    """Random strictly feasible quadratic program in dimension <= 3."""
    d = int(rng.integers(1, max_dim + 1))
    m = int(rng.integers(1, max_constraints + 1))
    q = rng.normal(size=(d, d))
    A = q @ q.T + d * np.eye(d)
    a = rng.normal(size=d)
    constraints = []
    x_feas = rng.normal(scale=0.5, size=d)
    for _ in range(m):
        q = rng.normal(size=(d, d))
        B = q @ q.T + 0.5 * np.eye(d)
        b = rng.normal(size=d)
        value_at_feas = float((x_feas - b) @ B @ (x_feas - b))
        # eps strictly above the feasible point's value keeps Slater valid
        eps = value_at_feas + float(rng.uniform(0.3, 2.0))
        constraints.append(sens.QuadConstraint(B=B, b=b, eps=eps))
    return sens.ConvexProblem(A=A, a=a, constraints=constraints)


@main.command("bench-partition")
@click.option("--instances", type=int, default=200)
@click.option("--seed", type=int, default=0)
@click.option("--max-tasks", type=int, default=4)
@click.option("--max-capacity", type=int, default=60)
def bench_partition(instances, seed, max_tasks, max_capacity):
    """Cross-check the partition solver against integer enumeration."""
    rng = np.random.default_rng(seed)
    n_min = buf.N_MIN_DEFAULT
    worst_gap = 0.0
    failures = 0
    for _ in range(instances):
        t = int(rng.integers(1, max_tasks + 1))
        capacity = int(rng.integers(t * n_min, max_capacity + 1))
        lam = rng.uniform(0.0, 5.0, size=t)
        sol = buf.solve_partition(lam, capacity, n_min)
        best = brute_force_partition(lam, capacity, n_min)
        gap = sol.objective - best
        worst_gap = max(worst_gap, gap)
        if gap > 1e-9:
            failures += 1
    click.echo(f"{instances} instances; worst objective gap = {worst_gap:.3e}")
    sys.exit(0 if failures == 0 else 1)


def brute_force_partition(lam, capacity: int, n_min: int) -> float:
    """Exhaustive integer enumeration of the partition objective
    (vectorized over the full grid of feasible allocations)."""
    lam_eff = np.asarray(lam, dtype=np.float64)
    t = len(lam_eff)
    ztab = np.full(capacity + 1, np.nan)
    sizes = np.arange(n_min, capacity + 1, dtype=np.float64)
    ztab[n_min:] = np.sqrt(np.log(sizes) / sizes)
    if t == 1:
        return float(lam_eff[0] * ztab[capacity])
    axes = [np.arange(n_min, capacity + 1)] * (t - 1)
    grids = np.meshgrid(*axes, indexing="ij")
    alloc = np.stack([g.ravel() for g in grids], axis=1)
    rest = capacity - alloc.sum(axis=1)
    ok = rest >= n_min
    alloc, rest = alloc[ok], rest[ok]
    obj = ztab[alloc] @ lam_eff[:-1] + lam_eff[-1] * ztab[rest]
    return float(obj.min())


if __name__ == "__main__":
    main()
