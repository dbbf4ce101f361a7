import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from partialreset.analysis import (NonConvergenceError, bifurcation_curve, c_critical,
                                   c_critical_closed_form, charpoly_radius, cluster_bounds,
                                   cluster_instability, commutation_bracket,
                                   delta_return_map_Ub, ek_root_bound, firing_charpoly,
                                   firing_jacobian, jacobian_at, reset_strength_bounds,
                                   solve_splay, splay_residual)
from partialreset.core import CouplingMatrix, DomainError, linear_reset
from partialreset.engine import NetworkState, return_map
from partialreset.rise_functions import (identity, make_LIF, make_LIF_CB, make_QIF,
                                         make_QIF_CB, make_Ub)

UB = make_Ub(-3.0)
N50, EPS50 = 50, 0.0175


# ---------------------------------------------------------------- splay states

def test_two_unit_identity_splay():
    sol = solve_splay(CouplingMatrix.homogeneous(2, 0.2), linear_reset(0.5), identity())
    assert np.allclose(sol.sigma_star, 0.4, atol=1e-13)
    assert sol.residual < 1e-12


@pytest.mark.parametrize("U", [make_Ub(-3.0), make_Ub(2.0), make_LIF(1.2),
                               make_QIF(0.6, -0.4), make_QIF_CB(1.0, -1.0, 2.0)], ids=repr)
@pytest.mark.parametrize("c", [0.0, 0.5, 1.0])
def test_homogeneous_splay_always_exists_and_is_fixed(U, c):
    coupling = CouplingMatrix.homogeneous(8, 0.03)
    R = linear_reset(c)
    sol = solve_splay(coupling, R, U)
    assert sol is not None and np.all(sol.sigma_star > 0) and sol.residual < 1e-12
    back, seq = return_map(sol.phases, 0, coupling, R, U)
    assert seq.sizes == [1] * 8
    assert np.max(np.abs(back.phases - sol.phases.phases)) < 1e-9


def test_single_unit_splay():
    sol = solve_splay(CouplingMatrix.meta([3], 0.1), linear_reset(0.5), UB)
    # the unit fires alone; its own pulses push it to R(2 eps) after each firing
    assert sol.sigma_star[0] == pytest.approx(1 - UB.inverse(0.1), abs=1e-14)


@pytest.mark.parametrize("sizes", [(2, 1, 1, 1, 1, 1), (3, 2, 1, 1), (1, 2, 1, 3)])
def test_meta_splay_is_fixed_by_return_map(sizes):
    coupling = CouplingMatrix.meta(sizes, 0.02)
    R = linear_reset(0.3)
    sol = solve_splay(coupling, R, UB)
    assert sol is not None and sol.residual < 1e-12
    back, seq = return_map(sol.phases, 0, coupling, R, UB)
    assert seq.sizes == [1] * len(sizes)
    assert np.max(np.abs(back.phases - sol.phases.phases)) < 1e-9


def test_large_cluster_has_no_periodic_state():
    sizes = [45] + [1] * 5
    assert solve_splay(CouplingMatrix.meta(sizes, EPS50), linear_reset(0.0), UB) is None


def test_residual_vanishes_only_at_solution():
    coupling = CouplingMatrix.homogeneous(5, 0.05)
    R = linear_reset(0.2)
    sol = solve_splay(coupling, R, UB)
    assert np.max(np.abs(splay_residual(sol.sigma_star, coupling, R, UB))) < 1e-12
    assert np.max(np.abs(splay_residual(sol.sigma_star * 1.01, coupling, R, UB))) > 1e-4


def test_meta_form_required():
    E = np.array([[0.0, 0.1, 0.2], [0.1, 0.0, 0.2], [0.15, 0.1, 0.0]])
    with pytest.raises(ValueError):
        solve_splay(CouplingMatrix(E), linear_reset(0.2), UB)


def test_nonconvergence_reported():
    with pytest.raises(NonConvergenceError):
        solve_splay(CouplingMatrix.meta([2, 1, 1], 0.05), linear_reset(0.2), UB, max_iter=0)


# ---------------------------------------------------------------- linear stability

def test_convex_splay_is_stable():
    n, eps = 10, 0.05
    coupling = CouplingMatrix.homogeneous(n, eps)
    R = linear_reset(0.5)
    rep = jacobian_at(solve_splay(coupling, R, UB), coupling, R, UB)
    assert rep.stable and rep.spectral_radius < 1
    assert np.all((rep.entries > 0) & (rep.entries < 1))
    assert rep.spectral_radius <= rep.ek_bound + 1e-9
    # for this family every slope is the same constant and the period product is a multiple of I
    assert np.allclose(rep.entries, np.exp(-3 * eps), atol=1e-13)
    assert rep.spectral_radius == pytest.approx(np.exp(-3 * eps * n), rel=1e-10)


def test_identity_is_marginal():
    coupling = CouplingMatrix.homogeneous(6, 0.05)
    R = linear_reset(0.5)
    rep = jacobian_at(solve_splay(coupling, R, identity()), coupling, R, identity())
    assert np.allclose(rep.entries, 1.0) and rep.ek_bound == pytest.approx(1.0)
    assert rep.spectral_radius == pytest.approx(1.0, abs=1e-9)


def test_concave_part_gives_slopes_above_one():
    U = make_QIF(0.9, -0.1)
    coupling = CouplingMatrix.homogeneous(8, 0.05)
    R = linear_reset(0.5)
    rep = jacobian_at(solve_splay(coupling, R, U), coupling, R, U)
    assert rep.entries.max() > 1


def test_jacobian_rejects_non_fixed_point():
    state = NetworkState.from_phases(np.linspace(1, 0.1, 5))
    with pytest.raises(ValueError):
        jacobian_at(state, CouplingMatrix.homogeneous(5, 0.02), linear_reset(0.2), UB)


def test_jacobian_matches_finite_differences():
    U = make_LIF_CB(3.0, 1.1)
    coupling = CouplingMatrix.homogeneous(6, 0.04)
    R = linear_reset(0.4)
    sol = solve_splay(coupling, R, U)
    rep = jacobian_at(sol, coupling, R, U)
    x0 = sol.phases.phases
    h = 1e-7

    def image(j, step):
        p = x0.copy()
        p[j + 1] += step
        back, _ = return_map(NetworkState(p, sol.phases.perm), 0, coupling, R, U)
        return back.phases[1:]

    fd = np.column_stack([(image(j, h) - image(j, -h)) / (2 * h) for j in range(5)])
    assert np.allclose(fd, rep.product, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 3.0), min_size=1, max_size=9))
def test_firing_charpoly_matches_eigenvalues(slopes):
    A = firing_jacobian(slopes)
    roots = np.roots(firing_charpoly(slopes)[::-1])
    eig = np.linalg.eigvals(A)
    assert np.allclose(np.sort_complex(np.round(roots, 6)), np.sort_complex(np.round(eig, 6)),
                       atol=1e-5)
    assert np.max(np.abs(eig)) <= ek_root_bound(firing_charpoly(slopes)) * (1 + 1e-9) + 1e-9
    assert ek_root_bound(firing_charpoly(slopes)) == pytest.approx(max(slopes))


def test_charpoly_radius_small_matrix():
    A = firing_jacobian([0.5, 0.4, 0.3])
    assert charpoly_radius(A) == pytest.approx(np.max(np.abs(np.linalg.eigvals(A))), rel=1e-9)


# ---------------------------------------------------------------- root bound

def test_ek_examples():
    assert ek_root_bound([1, 1]) == 1
    assert ek_root_bound([2, 1, 1]) == 2
    assert np.all(np.abs(np.roots([1, 1, 2])) <= 2)


@pytest.mark.parametrize("bad", [[1, 0, 1], [1, -1], [1]])
def test_ek_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        ek_root_bound(bad)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=2, max_size=9))
def test_ek_bound_holds(coeffs):
    roots = np.roots(coeffs[::-1])
    assert np.all(np.abs(roots) <= ek_root_bound(coeffs) * (1 + 1e-9) + 1e-9)


# ---------------------------------------------------------------- cluster bounds

@pytest.mark.parametrize("U", [make_LIF(1.3), make_LIF_CB(3.0, 1.1), UB], ids=repr)
def test_absorbing_reset_keeps_clusters(U):
    for a1 in (2, 10, 30):
        assert cluster_bounds(a1, N50, EPS50, linear_reset(0.0), U).sufficient_ok


def test_full_reset_breaks_clusters_for_convex_dcpd():
    U = make_LIF_CB(3.0, 1.1)
    for a1 in range(2, 21):
        assert cluster_bounds(a1, 20, 0.02, linear_reset(1.0), U).instability_ok


def test_instability_not_certified_without_reset():
    assert not cluster_instability(10, 20, 0.02, linear_reset(0.0), make_LIF_CB(3.0, 1.1))


def test_full_size_matches_synchrony_condition():
    # for a1 = N the sampled interval ends at (N-1) eps where the denominator is U'(1)
    U, n, eps = UB, 20, 0.02
    c_star = reset_strength_bounds(n, n, eps, U, "icpd")[0]
    assert not cluster_instability(n, n, eps, linear_reset(c_star * 0.95), U)
    assert cluster_instability(n, n, eps, linear_reset(min(1.0, c_star * 1.2)), U)


def test_bounds_reproduce_exact_curve_for_ub():
    curve = bifurcation_curve(N50, EPS50, -3.0)
    lo, hi = reset_strength_bounds(2, N50, EPS50, UB, "icpd")
    assert lo == pytest.approx(curve.c_cr[2], abs=1e-10)
    assert hi == pytest.approx(curve.c_cr[2], abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.floats(0.0, 1.0), st.sampled_from(["icpd", "dcpd"]))
def test_sufficient_implies_necessary(a1, c, kind):
    U = make_LIF(1.3) if kind == "icpd" else make_LIF_CB(3.0, 1.1)
    b = cluster_bounds(a1, 30, 0.02, linear_reset(c), U)
    assert b.kind == kind
    assert (not b.sufficient_ok) or b.necessary_ok


def test_bounds_need_a_classified_function():
    with pytest.raises(ValueError):
        cluster_bounds(3, 10, 0.02, linear_reset(0.2), make_QIF(2.0, -0.5))


# ---------------------------------------------------------------- commutation bracket

@pytest.mark.parametrize("U,kind", [(make_LIF(1.3), "icpd"), (make_LIF_CB(3.0, 1.1), "dcpd"),
                                    (make_QIF(0.6, -0.4), "dcpd"), (UB, "both")])
def test_commutation_bracket_examples(U, kind):
    lo, mid, hi = commutation_bracket(0.5, 0.3, [(0.05, 0.02), (0.1, 0.03), (0.0, 0.04)], U)
    if kind in ("icpd", "both"):
        assert lo <= mid + 1e-12 <= hi + 2e-12
    if kind in ("dcpd", "both"):
        assert lo >= mid - 1e-12 >= hi - 2e-12


def test_commutation_bracket_requires_order():
    with pytest.raises(ValueError):
        commutation_bracket(0.2, 0.3, [(0.1, 0.1)], UB)


# ---------------------------------------------------------------- exact bifurcation points

def test_critical_reset_example():
    assert c_critical_closed_form(N50, EPS50, -3.0) == pytest.approx(0.64615, abs=5e-5)
    assert c_critical(2, N50, EPS50, -3.0) == pytest.approx(
        c_critical_closed_form(N50, EPS50, -3.0), abs=1e-12)


def test_bifurcation_curve_monotone_and_table():
    curve = bifurcation_curve(N50, EPS50, -3.0)
    assert curve.is_strictly_decreasing()
    assert 0 < curve.c_cr[N50] < curve.c_cr[2] < 1
    assert curve.c_cr[50] == pytest.approx(0.0595, abs=1e-4)
    assert max(curve.residual.values()) < 1e-10
    lines = curve.to_table().splitlines()
    assert lines[0] == "a,c_cr,method,residual" and len(lines) == N50


def test_largest_stable_size():
    curve = bifurcation_curve(N50, EPS50, -3.0)
    assert curve.largest_stable_size(0.0) == N50
    assert curve.largest_stable_size(0.7) == 1
    assert curve.largest_stable_size(0.1) == 41


@pytest.mark.parametrize("args", [(1, 10, 0.05, -3.0), (2, 10, 0.05, 1.0),
                                  (2, 10, 0.2, -3.0)])
def test_critical_reset_preconditions(args):
    with pytest.raises(ValueError):
        c_critical(*args)


# ---------------------------------------------------------------- lag return map

def test_lag_map_fixes_zero():
    assert delta_return_map_Ub(0.0, 5, 20, 0.02, 0.4, -3.0) == pytest.approx(0, abs=1e-16)


def test_lag_map_concave_nondecreasing():
    upper = 1 - UB.inverse(1 - 0.02)
    d = np.linspace(0, upper, 400)
    m = delta_return_map_Ub(d, 5, 20, 0.02, 0.4, -3.0)
    assert np.all(np.diff(m) >= -1e-16)
    assert np.all(np.diff(m, 2) <= 1e-15)


def test_lag_map_domain():
    with pytest.raises(DomainError):
        delta_return_map_Ub(0.5, 5, 20, 0.02, 0.4, -3.0)


def test_lag_map_matches_simulation():
    n, eps, b, a1, c = 20, 0.02, -3.0, 5, 0.3
    rng = np.random.default_rng(3)
    d = 0.002
    rest = np.sort(rng.uniform(0.05, 0.7, n - a1))[::-1]
    state = NetworkState.from_phases(np.r_[np.ones(a1 - 1), 1 - d, rest])
    back, seq = return_map(state, 0, CouplingMatrix.homogeneous(n, eps), linear_reset(c), UB)
    p = back.by_id()[:a1]
    assert seq.sizes[0] == a1
    assert p.max() - p.min() == pytest.approx(delta_return_map_Ub(d, a1, n, eps, c, b),
                                              abs=1e-10)
