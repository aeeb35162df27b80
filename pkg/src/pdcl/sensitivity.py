"""Oracle-backed checks of duality and sensitivity claims on small convex
quadratic programs.

The oracle maximizes the dual of ``min (x-a)'A(x-a) s.t. (x-b_j)'B_j(x-b_j)
<= eps_j`` by cyclic per-coordinate bisection: for fixed multipliers the
inner minimization is a linear solve, and each coordinate slack is strictly
decreasing in its own multiplier, so the complementary-slackness root is
bracketed and bisected to machine precision.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np


class InfeasibleProblem(RuntimeError):
    pass


class OracleFailure(RuntimeError):
    pass


@dataclass
class QuadConstraint:
    B: np.ndarray  # positive semi-definite
    b: np.ndarray
    eps: float

    def value(self, x) -> float:
        d = x - self.b
        return float(d @ self.B @ d)


@dataclass
class ConvexProblem:
    A: np.ndarray  # positive definite
    a: np.ndarray
    constraints: list[QuadConstraint]

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.a = np.atleast_1d(np.asarray(self.a, dtype=np.float64))
        if np.any(np.linalg.eigvalsh(self.A) <= 0):
            raise ValueError("objective matrix must be positive definite")

    @property
    def dim(self) -> int:
        return len(self.a)

    def objective(self, x) -> float:
        d = x - self.a
        return float(d @ self.A @ d)


@dataclass
class OracleSolution:
    x: np.ndarray
    value: float
    lam: np.ndarray
    residuals: dict[str, float] = field(default_factory=dict)


def _minimizer(problem: ConvexProblem, lam: np.ndarray) -> np.ndarray:
    """Closed-form inner minimizer of the Lagrangian at fixed multipliers."""
    H = 2.0 * problem.A.copy()
    rhs = 2.0 * problem.A @ problem.a
    for lam_j, con in zip(lam, problem.constraints):
        if lam_j != 0.0:
            H += 2.0 * lam_j * con.B
            rhs += 2.0 * lam_j * con.B @ con.b
    return np.linalg.solve(H, rhs)


def kkt_residuals(problem: ConvexProblem, x, lam) -> dict[str, float]:
    grad = 2.0 * problem.A @ (x - problem.a)
    for lam_j, con in zip(lam, problem.constraints):
        grad = grad + lam_j * 2.0 * con.B @ (x - con.b)
    feas = max((con.value(x) - con.eps for con in problem.constraints), default=0.0)
    comp = max(
        (abs(lam_j * (con.value(x) - con.eps)) for lam_j, con in zip(lam, problem.constraints)),
        default=0.0,
    )
    return {
        "stationarity": float(np.max(np.abs(grad))),
        "primal_feasibility": max(0.0, feas),
        "dual_feasibility": max(0.0, float(-np.min(lam))) if len(lam) else 0.0,
        "complementarity": comp,
    }


def _coordinate_root(problem, lam, j, tol=1e-14, max_expand=200):
    """Solve slack_j(lam_j) = 0 (or project to 0) with other coords fixed."""
    con = problem.constraints[j]

    def slack_at(v):
        lam[j] = v
        return con.value(_minimizer(problem, lam)) - con.eps

    if slack_at(0.0) <= 0.0:
        lam[j] = 0.0
        return
    lo, hi = 0.0, 1.0
    for _ in range(max_expand):
        if slack_at(hi) < 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise InfeasibleProblem(f"constraint {j} cannot be satisfied (multiplier diverges)")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if slack_at(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * max(1.0, hi):
            break
    lam[j] = 0.5 * (lo + hi)


def solve_oracle(
    problem: ConvexProblem, tol: float = 1e-10, max_sweeps: int = 500
) -> OracleSolution:
    """Dual coordinate-bisection solver; KKT residuals below ``tol``."""
    m = len(problem.constraints)
    lam = np.zeros(m)
    if m == 0:
        x = problem.a.copy()
        return OracleSolution(x=x, value=0.0, lam=lam, residuals=kkt_residuals(problem, x, lam))

    for _ in range(max_sweeps):
        for j in range(m):
            _coordinate_root(problem, lam, j)
        x = _minimizer(problem, lam)
        res = kkt_residuals(problem, x, lam)
        if max(res.values()) < tol:
            return OracleSolution(x=x, value=problem.objective(x), lam=lam, residuals=res)
    raise OracleFailure(f"KKT residuals did not reach {tol}: {res}")


def perturb(problem: ConvexProblem, k: int, gamma: float) -> ConvexProblem:
    cons = [
        replace(c, eps=c.eps + (gamma if j == k else 0.0))
        for j, c in enumerate(problem.constraints)
    ]
    return ConvexProblem(A=problem.A, a=problem.a, constraints=cons)


def _active_set(problem: ConvexProblem, sol: OracleSolution, tol: float = 1e-7):
    return frozenset(
        j
        for j, con in enumerate(problem.constraints)
        if sol.lam[j] > 1e-9 or con.value(sol.x) >= con.eps - tol
    )


@dataclass
class SensitivityRow:
    gamma: float
    lhs: float  # P*(eps_k + gamma) - P*(eps_k)
    rhs: float  # -lam_k * gamma
    passed: bool


@dataclass
class SensitivityReport:
    lam_k: float
    rows: list[SensitivityRow]
    derivative_checked: bool
    derivative_error: float

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)


def check_sensitivity(
    problem: ConvexProblem,
    k: int,
    gammas,
    slack_tol: float = 1e-8,
    fd_step: float = 1e-4,
    fd_tol: float = 1e-3,
) -> SensitivityReport:
    """Verify the global linear under-estimator of the optimal value and,
    where the active set is stable, that the central-difference slope of
    the optimal value matches the negated multiplier."""
    base = solve_oracle(problem)
    rows = []
    for gamma in gammas:
        shifted = solve_oracle(perturb(problem, k, float(gamma)))
        lhs = shifted.value - base.value
        rhs = -base.lam[k] * float(gamma)
        rows.append(SensitivityRow(float(gamma), lhs, rhs, lhs >= rhs - slack_tol))

    plus = solve_oracle(perturb(problem, k, fd_step))
    minus = solve_oracle(perturb(problem, k, -fd_step))
    stable = (
        _active_set(problem, base)
        == _active_set(problem, plus)
        == _active_set(problem, minus)
    )
    fd_err = np.nan
    if stable:
        fd_slope = (plus.value - minus.value) / (2.0 * fd_step)
        fd_err = abs(fd_slope + base.lam[k])
        if fd_err >= fd_tol:
            rows.append(SensitivityRow(np.nan, fd_slope, -base.lam[k], False))
    return SensitivityReport(
        lam_k=float(base.lam[k]),
        rows=rows,
        derivative_checked=stable,
        derivative_error=float(fd_err),
    )


def check_sample_sensitivity(
    problem: ConvexProblem, gammas, slack_tol: float = 1e-8
) -> list[SensitivityReport]:
    """Per-constraint under-estimator checks, treating each constraint as a
    per-sample tolerance. Also verifies that perturbing an inactive
    (zero-multiplier) constraint leaves the optimal value unchanged."""
    base = solve_oracle(problem)
    reports = []
    for k in range(len(problem.constraints)):
        report = check_sensitivity(problem, k, gammas, slack_tol=slack_tol)
        if base.lam[k] <= 1e-12:
            # loosening an inactive constraint must leave the optimum flat
            for gamma in gammas:
                g = float(gamma)
                if g <= 0:
                    continue
                shifted = solve_oracle(perturb(problem, k, g))
                diff = shifted.value - base.value
                report.rows.append(SensitivityRow(g, diff, 0.0, abs(diff) <= slack_tol))
        reports.append(report)
    return reports


def write_report_csv(path, problem_id, k, report: SensitivityReport) -> None:
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in report.rows:
            writer.writerow(
                [
                    problem_id,
                    k,
                    f"{row.gamma:.17g}",
                    f"{row.lhs:.17g}",
                    f"{row.rhs:.17g}",
                    int(row.passed),
                ]
            )


def empirical_dual_study(
    n_grid,
    trials: int,
    seed: int = 0,
    obj_mean: float = 2.0,
    con_mean: float = 0.0,
    noise_std: float = 0.5,
    eps: float = 1.0,
):
    """Convergence of empirical multipliers to the population multiplier.

    Family: scalar least squares ``min E[(x - z)^2] s.t. E[(x - w)^2] <=
    eps`` with Gaussian z, w. Both the population and the empirical
    problems reduce to 1-D quadratics (sample mean as center, tolerance
    shifted by the sample variance), so the same oracle solves both and the
    population multiplier is exact.

    Returns a list of ``(n, mean_distance, std_distance)`` tuples.
    """
    A = np.array([[1.0]])

    def solve_family(center_obj, center_con, eps_eff):
        if eps_eff <= 0:
            raise InfeasibleProblem("constraint tolerance below irreducible variance")
        prob = ConvexProblem(
            A=A,
            a=np.array([center_obj]),
            constraints=[QuadConstraint(B=A, b=np.array([center_con]), eps=eps_eff)],
        )
        return solve_oracle(prob).lam[0]

    lam_pop = solve_family(obj_mean, con_mean, eps - noise_std**2)

    rng = np.random.default_rng(seed)
    table = []
    for n in n_grid:
        dists = np.empty(trials)
        for i in range(trials):
            z = rng.normal(obj_mean, noise_std, size=n)
            w = rng.normal(con_mean, noise_std, size=n)
            lam_hat = solve_family(z.mean(), w.mean(), eps - w.var())
            dists[i] = abs(lam_hat - lam_pop)
        table.append((int(n), float(dists.mean()), float(dists.std())))
    return table
