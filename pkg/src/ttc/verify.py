"""Property suites behind ``ttc verify``.

Each suite returns rows ``(check, expected, actual, tolerance, passed)``.
"""

import numpy as np

from .density import pushed_density_fn, step_map, verify_density_histogram
from .engine import analytic_ttc, n_theta
from .harness import advreg_solve
from .oracle import (RadialPotential, TranslationPotential, brute_force_w1, min_transport_length,
                     w1_1d, w1_hungarian)
from .tasks import annulus_density, interval_density, sample_task


class Row(tuple):
    __slots__ = ()

    def __new__(cls, check, expected, actual, tolerance, passed):
        return super().__new__(cls, (check, expected, actual, tolerance, bool(passed)))


def _abs_row(name, expected, actual, tol):
    return Row(name, expected, actual, tol, abs(actual - expected) <= tol)


def _rel_row(name, expected, actual, tol):
    return Row(name, expected, actual, tol, abs(actual - expected) <= tol * abs(expected))


def _below(name, bound, actual):
    return Row(name, bound, actual, 0.0, actual < bound)


def convergence_suite(seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    # translation family in 1-D: exact geometric decay
    xs = sample_task("interval", rng, 2048)
    ys = xs + 2.0
    _, dists = analytic_ttc(xs, ys, TranslationPotential([2.0]), 0.5, 3, lambda a, b: w1_1d(a, b)[0])
    rows.append(_rel_row("translation_w1_0", 2.0, dists[0], 1e-9))
    for n in (1, 2, 3):
        rows.append(_rel_row(f"translation_w1_{n}", 2.0 * 0.5 ** n, dists[n], 1e-9))
    # 2-D translation with the Hungarian oracle
    sq = sample_task("square", rng, 256)
    v = np.array([2.0, 0.0])
    _, d2 = analytic_ttc(sq, sq + v, TranslationPotential(v), 0.9, 2, lambda a, b: w1_hungarian(a, b)[0])
    for n in (1, 2):
        rows.append(_rel_row(f"square_w1_{n}", 2.0 * 0.1 ** n, d2[n], 1e-9))
    # radial step onto a near point mass
    ann = sample_task("annulus", rng, 512)
    pt = sample_task("point", rng, 512)
    w0, plan0 = w1_hungarian(ann, pt)
    moved = step_map(RadialPotential([0.0, 0.0]), 0.5, ann)
    w1, plan1 = w1_hungarian(moved, pt)
    rows.append(_abs_row("radial_w1_drop", 0.5, w0 - w1, 0.02))
    drop = min_transport_length(plan0) - min_transport_length(plan1)
    rows.append(Row("radial_ell0_drop", 0.5, drop, 0.02, drop <= 0.52))
    # horizon formula on exact cases
    for ratio, theta, expected in ((0.75, 0.5, 1), (0.5, 0.5, 0), (0.875, 0.5, 2), (0.99, 0.9, 1)):
        got = n_theta(ratio, 1.0, theta)
        rows.append(Row(f"n_theta_{ratio}_{theta}", expected, got, 0, got == expected))
    return rows


def density_suite(seed=0, n_samples=100_000):
    rng = np.random.default_rng(seed)
    rows = []
    u = TranslationPotential([2.0])
    eta = 0.25
    rho_t = pushed_density_fn(interval_density, u, eta)
    push = lambda r, n: step_map(u, eta, sample_task("interval", r, n))
    bins = np.linspace(0.0, 1.5, 51)
    rows.append(_below("translation_tv", 0.03, verify_density_histogram(rho_t, push, bins, n_samples, rng)))

    radial = RadialPotential([0.0, 0.0])
    rho_r = pushed_density_fn(annulus_density, radial, 0.5)
    push_r = lambda r, n: step_map(radial, 0.5, sample_task("annulus", r, n))
    rbins = np.linspace(0.25, 1.75, 31)
    rows.append(_below("radial_tv", 0.05,
                       verify_density_histogram(rho_r, push_r, rbins, n_samples, rng, "radial")))

    doubled = lambda y: 2.0 * rho_r(y)
    tv = verify_density_histogram(doubled, push_r, rbins, n_samples, rng, "radial")
    rows.append(Row("negative_control_tv", 0.3, tv, 0.0, tv > 0.3))
    return rows


def prop3_suite(seed=0, n_points=100):
    rng = np.random.default_rng(seed)
    rows = []
    # translation: every point moves |v|, so ell0 = |v|
    v = np.array([1.5, -2.0])
    u = TranslationPotential(v)
    eta = 0.5 * np.linalg.norm(v)
    worst = 0.0
    for x0 in rng.uniform(-3, 3, size=(n_points, 2)):
        worst = max(worst, np.max(np.abs(advreg_solve(u, x0, eta) - step_map(u, eta, x0)[0])))
    rows.append(_abs_row("translation_advreg_vs_step", 0.0, worst, 1e-6))
    # radial on the annulus: ell0 = inner radius = 1
    radial = RadialPotential([0.0, 0.0])
    eta = 0.5
    worst = 0.0
    for x0 in sample_task("annulus", rng, n_points):
        worst = max(worst, np.max(np.abs(advreg_solve(radial, x0, eta) - step_map(radial, eta, x0)[0])))
    rows.append(_abs_row("radial_advreg_vs_step", 0.0, worst, 1e-6))
    # beyond the ray endpoint the minimizer sits at the center, not at the TTC step
    x0 = np.array([0.3, 0.4])
    sol = advreg_solve(radial, x0, 1.0)
    naive = step_map(radial, 1.0, x0)[0]
    rows.append(_abs_row("violation_minimizer_at_center", 0.0, float(np.linalg.norm(sol)), 1e-6))
    gap = float(np.linalg.norm(sol - naive))
    rows.append(Row("violation_differs_from_step", 0.5, gap, 1e-6, abs(gap - 0.5) <= 1e-6))
    return rows


def oracle_suite(seed=0, n_instances=500):
    rng = np.random.default_rng(seed)
    mismatches = 0
    worst_1d = 0.0
    for _ in range(n_instances):
        n = int(rng.integers(1, 8))
        d = int(rng.integers(1, 4))
        xs, ys = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        if w1_hungarian(xs, ys)[0] != brute_force_w1(xs, ys):
            mismatches += 1
        a, b = rng.normal(size=n), rng.normal(size=n)
        worst_1d = max(worst_1d, abs(w1_1d(a, b)[0] - brute_force_w1(a, b)))
    return [
        Row("hungarian_eq_brute_force", 0, mismatches, 0, mismatches == 0),
        Row("sorted_eq_brute_force_1d", 0.0, worst_1d, 0.0, worst_1d == 0.0),
    ]


SUITES = {
    "convergence": convergence_suite,
    "density": density_suite,
    "prop3": prop3_suite,
    "oracle": oracle_suite,
}


def run_suite(name, seed=0):
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](seed)
