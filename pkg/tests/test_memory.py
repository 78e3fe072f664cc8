"""Kernels, history grids, weighted norms, and the transport step."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memheat.domain import build_domain, norm_v1_sq, norm_x2_sq
from memheat.memory import (
    HistoryField,
    advance_history,
    build_history_grid,
    convolve_wentzell,
    dissipation_check,
    ds_flat_energy,
    exponential_kernel,
    history_from_profile,
    history_oracle,
    k2_norm_sq,
    KernelSpec,
    memory_norm_sq,
    rescale_kernel,
    sup_tau_tail,
    tabulated_kernel,
    tail_function,
    validate_kernel,
    zero_history,
)
from memheat.experiments import smooth_profile


# -- kernels -----------------------------------------------------------------


def test_exponential_kernel_moments_are_exact():
    k = exponential_kernel(0.5, rate=2.0)
    assert k.mu(0.0) == pytest.approx(2.0, abs=1e-15)
    assert k.mu_mass() == pytest.approx(1.0, abs=1e-15)
    assert k.first_moment() == pytest.approx(0.5, abs=1e-15)
    # additivity of the exact integral
    total = k.mu_integral(0.0, 1.0) + k.mu_integral(1.0, math.inf)
    assert total == pytest.approx(k.mu_mass(), abs=1e-15)


def test_kernel_parameter_validation():
    with pytest.raises(ValueError):
        exponential_kernel(0.0, rate=1.0)
    with pytest.raises(ValueError):
        exponential_kernel(1.0, rate=1.0)
    with pytest.raises(ValueError):
        exponential_kernel(0.5, rate=-1.0)
    with pytest.raises(ValueError):
        KernelSpec("exponential", 0.5, delta=-1.0)
    with pytest.raises(ValueError):
        KernelSpec("mystery", 0.5, delta=1.0)


def test_validate_kernel_passes_exponential():
    rep = validate_kernel(exponential_kernel(0.5, rate=2.0))
    assert rep.passed
    assert set(rep.checks) == {"nonnegative", "nonincreasing",
                               "delta_domination", "unit_mass"}
    assert rep.checks["unit_mass"]["slack"] == pytest.approx(0.0, abs=1e-12)


def test_validate_kernel_flags_overclaimed_decay_rate():
    rep = validate_kernel(exponential_kernel(0.5, rate=2.0, delta=3.0))
    assert not rep.passed
    assert not rep.checks["delta_domination"]["passed"]
    assert rep.checks["delta_domination"]["slack"] > 0.0


def test_tabulated_kernel_roundtrip():
    s = np.linspace(0.0, 40.0, 4001)
    mu = 0.5 * np.exp(-s)
    # normalize so the trapezoid first moment is exactly 1 - omega
    mu *= 0.5 / np.trapezoid(s * mu, s)
    k = tabulated_kernel(0.5, s, mu, delta=0.8)
    rep = validate_kernel(k)
    assert rep.passed, rep.checks
    assert k.mu(50.0) == 0.0
    assert k.mu_integral(0.0, math.inf) == pytest.approx(
        float(np.trapezoid(mu, s)), rel=1e-12)


def test_tabulated_kernel_requires_increasing_grid():
    with pytest.raises(ValueError):
        tabulated_kernel(0.5, [0.0, 1.0, 1.0], [1.0, 0.5, 0.2], delta=0.5)
    with pytest.raises(ValueError):
        tabulated_kernel(0.5, [0.5, 1.0], [1.0, 0.5], delta=0.5)


def test_rescaled_kernel_scaling_identities():
    k = exponential_kernel(0.4, rate=1.5)
    rk = rescale_kernel(k, 0.25)
    assert rk.mass() == pytest.approx(k.mu_mass() / 0.25, rel=1e-14)
    assert rk.integral(0.1, 0.5) == pytest.approx(
        k.mu_integral(0.4, 2.0) / 0.25, rel=1e-13)
    assert rk.mu(0.25) == pytest.approx(k.mu(1.0) / 0.25**2, rel=1e-14)
    with pytest.raises(ValueError):
        rescale_kernel(k, 0.0)
    with pytest.raises(ValueError):
        rescale_kernel(k, 1.5)


# -- history grid -------------------------------------------------------------


def test_history_grid_masses_cover_the_kernel():
    k = exponential_kernel(0.5, rate=1.0)
    for spacing in ("geometric", "uniform"):
        g = build_history_grid(k, 0.5, n_s=128, spacing=spacing)
        assert g.edges[0] == 0.0
        assert np.all(np.diff(g.s_nodes) > 0.0)
        assert np.all((g.s_nodes >= g.edges[:-1]) & (g.s_nodes <= g.edges[1:]))
        covered = g.weights.sum() / rescale_kernel(k, 0.5).mass()
        assert covered >= 1.0 - 1e-6
        assert g.window_weights(0.0, g.s_max).sum() == pytest.approx(
            g.weights.sum(), rel=1e-12)


def test_history_grid_refuses_truncation():
    k = exponential_kernel(0.5, rate=1.0)
    with pytest.raises(ValueError, match="truncates"):
        build_history_grid(k, 0.5, n_s=64, s_max=0.5)
    with pytest.raises(ValueError):
        build_history_grid(k, 0.5, n_s=8)
    with pytest.raises(ValueError):
        build_history_grid(k, 0.5, n_s=64, spacing="chebyshev")


def test_uniform_grids_share_nodes_across_eps():
    k = exponential_kernel(0.5, rate=1.0)
    g1 = build_history_grid(k, 0.4, n_s=64, spacing="uniform", s_max=8.0)
    g2 = build_history_grid(k, 0.1, n_s=64, spacing="uniform", s_max=8.0)
    assert g1.same_nodes(g2)
    g3 = build_history_grid(k, 0.4, n_s=64, spacing="geometric")
    assert not g1.same_nodes(g3)


# -- history fields and norms --------------------------------------------------


def test_zero_history_has_zero_norms(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5)
    phi = zero_history(g, interval)
    for level in (0, 1, 2):
        assert memory_norm_sq(phi, level, interval, 1.0, 1.0) == 0.0
    assert k2_norm_sq(phi, interval, 1.0, 1.0) == 0.0
    # the limit problem carries no history at all
    assert memory_norm_sq(None, 1, interval, 1.0, 1.0) == 0.0
    assert k2_norm_sq(None, interval, 1.0, 1.0) == 0.0
    assert tail_function(None, 2.0, interval, 1.0, 1.0) == 0.0


def test_separable_history_norm_factorizes(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5)
    shape = smooth_profile(interval)
    phi = history_from_profile(g, interval, lambda s: np.ones_like(s), shape)
    mass = g.weights.sum()
    assert memory_norm_sq(phi, 0, interval, 0.7, 1.3) == pytest.approx(
        mass * norm_x2_sq(shape, interval), rel=1e-12)
    assert memory_norm_sq(phi, 1, interval, 0.7, 1.3) == pytest.approx(
        mass * norm_v1_sq(shape, interval, 0.7, 1.3), rel=1e-12)
    with pytest.raises(ValueError):
        memory_norm_sq(phi, 3, interval, 0.7, 1.3)


def test_memory_norm_scales_quadratically(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5)
    phi = history_from_profile(g, interval, lambda s: np.exp(-s),
                               smooth_profile(interval))
    base = memory_norm_sq(phi, 1, interval, 0.5, 1.0)
    assert memory_norm_sq(2.5 * phi, 1, interval, 0.5, 1.0) == pytest.approx(
        6.25 * base, rel=1e-12)


def test_history_fields_on_different_grids_do_not_mix(interval):
    k = exponential_kernel(0.5, rate=1.0)
    g1 = build_history_grid(k, 0.5, n_s=64)
    g2 = build_history_grid(k, 0.5, n_s=32)
    a = zero_history(g1, interval)
    b = zero_history(g2, interval)
    with pytest.raises(ValueError):
        _ = a + b


def test_convolution_matches_weighted_slice_sum(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5, n_s=64)
    shape = smooth_profile(interval)
    phi = history_from_profile(g, interval, lambda s: np.exp(-s), shape)
    load = convolve_wentzell(phi, interval, 0.7, 1.3)
    # linearity: the load is A_W applied to the weighted profile sum
    from memheat.domain import apply_wentzell
    coeff = float(g.weights @ np.exp(-g.s_nodes))
    ref = apply_wentzell(coeff * shape, interval, 0.7, 1.3)
    assert np.allclose(load.bulk, ref.bulk, rtol=1e-10, atol=1e-11)
    assert np.allclose(load.boundary, ref.boundary, rtol=1e-10, atol=1e-11)
    assert np.array_equal(convolve_wentzell(None, interval, 0.7, 1.3).bulk,
                          np.zeros(interval.n_bulk))


# -- transport ------------------------------------------------------------------


def test_one_step_from_empty_history_fills_the_ramp(interval):
    # constant inflow c over one step: Phi(s) = c * min(s, dt) at every node
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5, n_s=64)
    c = 1.7
    u = interval.constant_field(c)
    phi = advance_history(zero_history(g, interval), u, 0.05, u_prev=u)
    expect = c * np.minimum(g.s_nodes, 0.05)
    assert np.max(np.abs(phi.bulk - expect[:, None])) < 1e-14
    assert np.max(np.abs(phi.boundary - expect[:, None])) < 1e-14


def test_many_steps_constant_inflow_exact_on_step_aligned_grid(interval):
    k = exponential_kernel(0.5, rate=1.0)
    g = build_history_grid(k, 0.5, n_s=64, spacing="uniform", s_max=8.0)
    dt = float(g.s_nodes[1] - g.s_nodes[0])
    c = -0.8
    u = interval.constant_field(c)
    phi = zero_history(g, interval)
    for m in range(1, 8):
        phi = advance_history(phi, u, dt, u_prev=u)
        expect = c * np.minimum(g.s_nodes, m * dt)
        assert np.max(np.abs(phi.bulk - expect[:, None])) < 1e-13


def test_transport_without_inflow_cannot_grow(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5, n_s=96)
    phi = history_from_profile(g, interval, lambda s: np.minimum(s, 1.0),
                               smooth_profile(interval))
    zero = interval.zero_field()
    prev = memory_norm_sq(phi, 1, interval, 0.5, 1.0)
    for _ in range(20):
        phi = advance_history(phi, zero, 0.05, u_prev=zero)
        cur = memory_norm_sq(phi, 1, interval, 0.5, 1.0)
        assert cur <= prev * (1.0 + 1e-12)
        prev = cur


def test_advance_history_rejects_nonpositive_step(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5, n_s=64)
    with pytest.raises(ValueError):
        advance_history(zero_history(g, interval),
                        interval.constant_field(1.0), 0.0)


def test_transport_matches_oracle_on_step_aligned_grid(interval):
    k = exponential_kernel(0.5, rate=1.0)
    g = build_history_grid(k, 0.5, n_s=64, spacing="uniform", s_max=8.0)
    dt = float(g.s_nodes[1] - g.s_nodes[0])
    rng = np.random.default_rng(3)
    n_steps = 20
    times = np.arange(n_steps + 1) * dt
    path = [interval.field_from_bulk(rng.normal(size=interval.n_bulk))
            for _ in range(n_steps + 1)]
    phi = zero_history(g, interval)
    for i in range(n_steps):
        phi = advance_history(phi, path[i + 1], dt, u_prev=path[i])
    ora = history_oracle(times, path, g, interval, times[-1])
    err = max(np.max(np.abs(phi.bulk - ora.bulk)),
              np.max(np.abs(phi.boundary - ora.boundary)))
    assert err < 1e-12


def test_oracle_carries_initial_history_beyond_elapsed_time(interval):
    k = exponential_kernel(0.5, rate=1.0)
    g = build_history_grid(k, 0.5, n_s=64, spacing="uniform", s_max=8.0)
    shape = interval.constant_field(1.0)
    phi0 = history_from_profile(g, interval, lambda s: s, shape)
    times = np.array([0.0, 0.125])
    c = 2.0
    path = [shape * c, shape * c]
    ora = history_oracle(times, path, g, interval, 0.125, phi0=phi0)
    # recent nodes hold the fresh integral, older ones the shifted ramp
    recent = g.s_nodes <= 0.125
    expect = np.where(recent, c * g.s_nodes, (g.s_nodes - 0.125) + c * 0.125)
    assert np.max(np.abs(ora.bulk - expect[:, None])) < 1e-12


def test_oracle_validates_the_sampled_path(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5, n_s=64)
    u = interval.constant_field(1.0)
    with pytest.raises(ValueError):
        history_oracle(np.array([0.5, 1.0]), [u, u], g, interval, 0.7)
    with pytest.raises(ValueError):
        history_oracle(np.array([0.0, 1.0]), [u, u], g, interval, 2.0)


# -- tails, strong norm, dissipation -------------------------------------------


def test_tail_function_decreases_dyadically(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5, n_s=128)
    phi = history_from_profile(g, interval, lambda s: np.minimum(s, 1.0),
                               smooth_profile(interval))
    taus = [1.0, 2.0, 4.0, 8.0]
    vals = [tail_function(phi, t, interval, 0.5, 1.0) for t in taus]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[0] > 0.0
    with pytest.raises(ValueError):
        tail_function(phi, 0.5, interval, 0.5, 1.0)


def test_strong_history_norm_dominates_its_parts(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5, n_s=128)
    phi = history_from_profile(g, interval, lambda s: np.minimum(s, 1.0),
                               smooth_profile(interval))
    m2 = memory_norm_sq(phi, 2, interval, 0.5, 1.0)
    total = k2_norm_sq(phi, interval, 0.5, 1.0)
    assert total >= m2
    assert total >= sup_tau_tail(phi, interval, 0.5, 1.0)
    assert ds_flat_energy(phi, interval) > 0.0


def test_dissipation_inequality_holds_for_smooth_histories(interval):
    g = build_history_grid(exponential_kernel(0.5, rate=1.0), 0.5, n_s=128)
    shape = smooth_profile(interval)
    for profile in (lambda s: np.minimum(s, 1.0), lambda s: np.exp(-s)):
        phi = history_from_profile(g, interval, profile, shape)
        rep = dissipation_check(phi, interval, 0.0, 1.0)
        assert rep.passed
        assert rep.slack >= 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(min_value=0.05, max_value=1.0),
       st.floats(min_value=0.5, max_value=4.0))
def test_rescaled_mass_identity(eps, rate):
    k = exponential_kernel(0.5, rate=rate)
    rk = rescale_kernel(k, eps)
    assert rk.mass() * eps == pytest.approx(k.mu_mass(), rel=1e-12)
