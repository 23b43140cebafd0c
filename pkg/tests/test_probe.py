import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from enforced_transfer.linalg import DimensionError, GaussianStats, ScalarStats, mahalanobis_batch
from enforced_transfer.probe import (
    ProbeParams,
    classify,
    classify_batch,
    critique,
    critiques,
    distances,
    fit_probe,
    fit_probe_from_critiques,
    load_probe,
    membership,
    route,
    route_critiques,
    save_probe,
    source_labels,
    target_labels,
)

from oracles import loop_covariance, loop_mean, loop_quadratic_form, two_pass_stats


def _unit_probe(dim=2, mu_s=1.0, sig_s=1.0, mu_t=1.0, sig_t=1.0, lam_s=2.0, lam_t=2.0, offset=4.0):
    """Identity-covariance Gaussians at 0 and ``offset * e0``."""
    eye = np.eye(dim)
    t_mean = np.zeros(dim)
    t_mean[0] = offset
    return ProbeParams(
        GaussianStats(np.zeros(dim), eye, eye, 0.0),
        GaussianStats(t_mean, eye, eye, 0.0),
        ScalarStats(mu_s, sig_s), ScalarStats(mu_t, sig_t), lam_s, lam_t,
    )


def test_source_only_membership_routes_source():
    p = _unit_probe()
    r = route(p, np.array([0.5, 0.0]))  # m_s .25, m_t 12.25
    assert r.membership.kind == "source" and r.branch == "source" and not r.tie_broken


def test_target_only_membership_routes_target():
    r = route(_unit_probe(), np.array([3.5, 0.0]))
    assert r.membership.kind == "target" and r.branch == "target"


def test_both_resolved_by_smaller_z():
    p = _unit_probe(mu_s=1.0, sig_s=10.0, mu_t=1.0, sig_t=10.0, offset=1.0)
    r = route(p, np.array([0.1, 0.0]))  # m_s .01, m_t .81 -> z_s .099 > z_t .019
    assert r.membership.kind == "both" and r.tie_broken
    assert r.branch == "target"


def test_neither_resolved_by_smaller_z():
    p = _unit_probe(mu_s=0.0, sig_s=0.1, mu_t=0.0, sig_t=0.1, offset=10.0)
    r = route(p, np.array([3.0, 0.0]))  # m_s 9, m_t 49
    assert r.membership.kind == "neither" and r.branch == "source"


def test_exact_z_tie_goes_to_source():
    p = _unit_probe(offset=2.0)
    r = route(p, np.array([1.0, 0.0]))  # equidistant, identical stats
    assert r.m_source == r.m_target and r.branch == "source"


def test_band_is_closed():
    p = _unit_probe(mu_s=0.5, sig_s=0.25, lam_s=2.0, offset=100.0)
    # m_s lands exactly on mu + 2 sigma = 1.0, and on mu - 2 sigma = 0.0
    assert membership(p, np.array([1.0, 0.0])).in_source
    assert membership(p, np.array([0.0, 0.0])).in_source
    assert not membership(p, np.array([1.01, 0.0])).in_source


def test_zero_sigma_is_floored():
    p = _unit_probe(mu_s=0.25, sig_s=0.0, mu_t=0.25, sig_t=0.0, offset=5.0)
    r = route(p, np.array([0.5, 0.0]))
    assert r.membership.kind == "source" and np.isfinite(r.m_source)


def test_distance_dimension_mismatch():
    with pytest.raises(DimensionError):
        distances(_unit_probe(dim=3), np.zeros(2))


def test_lambda_validation():
    with pytest.raises(ValueError):
        _unit_probe(lam_s=0.0)


def test_fit_from_critiques_matches_loop_oracle():
    rng = np.random.default_rng(0)
    c_s = rng.standard_normal((80, 5))
    c_t = rng.standard_normal((60, 5)) * 2 + 3
    p = fit_probe_from_critiques(c_s, c_t, ridge=0.0)
    np.testing.assert_allclose(p.source_stats.mean, loop_mean(c_s.tolist()), rtol=1e-12)
    np.testing.assert_allclose(p.target_stats.covariance,
                               loop_covariance(c_t.tolist(), p.target_stats.mean.tolist()), rtol=1e-10)
    m = [loop_quadratic_form(c, p.source_stats.mean.tolist(), p.source_stats.precision.tolist())
         for c in c_s.tolist()]
    mu, sigma = two_pass_stats(m)
    assert p.source_m_stats.mu == pytest.approx(mu, rel=1e-10)
    assert p.source_m_stats.sigma == pytest.approx(sigma, rel=1e-10)


def test_fit_needs_two_samples():
    with pytest.raises(ValueError, match="at least 2"):
        fit_probe_from_critiques(np.zeros((1, 2)), np.zeros((5, 2)))


def test_critique_shape_and_single_vector(tiny_models, tiny_acts):
    xs, _ = tiny_acts
    c = critiques(tiny_models, xs.activations[:7])
    assert c.shape == (7, 2 * tiny_models.critique_half_dim)
    np.testing.assert_array_equal(critique(tiny_models, xs.activations[0]), c[0])
    with pytest.raises(DimensionError):
        critiques(tiny_models, np.zeros((2, 9)))


def test_classify_uses_the_routed_head(tiny_models, tiny_acts):
    xs, xt = tiny_acts
    p = fit_probe(tiny_models, xs, xt)
    x = np.vstack([xs.activations[:10], xt.activations[:10]])
    labels, routes = classify_batch(tiny_models, p, x)
    expected = np.where(routes.to_target, target_labels(tiny_models, x), source_labels(tiny_models, x))
    assert np.array_equal(labels, expected)
    for i in (0, 15):
        single, r = classify(tiny_models, p, x[i])
        assert single == labels[i] and (r.branch == "target") == routes.to_target[i]


def test_probe_round_trip_exact(tiny_models, tiny_acts, tmp_path):
    xs, xt = tiny_acts
    p = fit_probe(tiny_models, xs, xt, 1.5, 2.5)
    save_probe(p, tmp_path / "probe.json")
    q = load_probe(tmp_path / "probe.json")
    assert q == p
    c = critiques(tiny_models, xt.activations)
    a, b = route_critiques(p, c), route_critiques(q, c)
    assert np.array_equal(a.m_source, b.m_source) and np.array_equal(a.to_target, b.to_target)


# properties ----------------------------------------------------------------

def _random_probe(rng, lam_s, lam_t):
    d = int(rng.integers(2, 6))
    c_s = rng.standard_normal((int(rng.integers(10, 60)), d))
    c_t = rng.standard_normal((int(rng.integers(10, 60)), d)) * rng.uniform(0.5, 2) + rng.uniform(-3, 3)
    return fit_probe_from_critiques(c_s, c_t, lam_s, lam_t), c_s, c_t


@given(st.integers(0, 10_000), st.floats(1.0, 4.0))
@settings(max_examples=60, deadline=None)
def test_unambiguous_membership_always_routes_accordingly(seed, lam):
    rng = np.random.default_rng(seed)
    p, _, _ = _random_probe(rng, lam, rng.uniform(1.0, 4.0))
    r = route_critiques(p, rng.standard_normal((40, p.dim)) * 3)
    only_s = r.in_source & ~r.in_target
    only_t = r.in_target & ~r.in_source
    assert not np.any(r.to_target[only_s])
    assert np.all(r.to_target[only_t])
    assert np.array_equal(r.tie_broken, r.in_source == r.in_target)


@given(st.integers(0, 10_000), st.floats(0.5, 5.0))
@settings(max_examples=60, deadline=None)
def test_symmetric_lambda_routes_by_smaller_z(seed, lam):
    rng = np.random.default_rng(seed)
    p, _, _ = _random_probe(rng, lam, lam)
    r = route_critiques(p, rng.standard_normal((40, p.dim)) * 3)
    z_s = np.abs(r.m_source - p.source_m_stats.mu) / p.source_m_stats.sigma
    z_t = np.abs(r.m_target - p.target_m_stats.mu) / p.target_m_stats.sigma
    clear = np.abs(z_s - z_t) > 1e-9
    assert np.array_equal(r.to_target[clear], (z_t < z_s)[clear])


@given(st.integers(0, 10_000), st.floats(1.0, 4.0))
@settings(max_examples=60, deadline=None)
def test_in_domain_coverage_meets_chebyshev_bound(seed, lam):
    rng = np.random.default_rng(seed)
    p, c_s, _ = _random_probe(rng, lam, lam)
    frac = float(np.mean(route_critiques(p, c_s).in_source))
    assert frac >= 1.0 - 1.0 / lam**2


@given(st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_batch_and_single_routes_agree(seed):
    rng = np.random.default_rng(seed)
    p, _, _ = _random_probe(rng, 2.0, 1.5)
    cs = rng.standard_normal((10, p.dim)) * 2
    batch = route_critiques(p, cs)
    for i, c in enumerate(cs):
        r = route(p, c)
        assert (r.branch == "target") == batch.to_target[i]
        assert r.m_source == pytest.approx(batch.m_source[i], rel=1e-12)


# spec-level examples -------------------------------------------------------

def _twin_models(tiny_models):
    from enforced_transfer.cell import EtcModels
    m = tiny_models
    return EtcModels(m.e_source, m.e_source.copy(), m.discriminator, m.d_source, m.d_source.copy(), 1)


def test_identical_encoders_give_equal_halves(tiny_models, tiny_acts):
    twin = _twin_models(tiny_models)
    c = critiques(twin, tiny_acts[0].activations[:5])
    h = c.shape[1] // 2
    np.testing.assert_array_equal(c[:, :h], c[:, h:])


def test_critique_equals_manual_composition(tiny_models, tiny_acts):
    from oracles import loop_forward
    m = tiny_models
    x = tiny_acts[1].activations[3]
    d = m.discriminator
    expected = []
    for enc in (m.e_source, m.e_target):
        emb = loop_forward(enc.specs, enc.weights, enc.biases, x.tolist())
        expected += loop_forward(d.specs, d.weights, d.biases, emb, upto=1)
        expected += loop_forward(d.specs, d.weights, d.biases, emb)
    np.testing.assert_allclose(critique(m, x), expected, rtol=1e-12, atol=1e-15)


def test_same_data_same_encoders_gives_identical_stats(tiny_models, tiny_acts):
    from enforced_transfer.features import ActivationSet
    xs = tiny_acts[0]
    twin = _twin_models(tiny_models)
    p = fit_probe(twin, xs, ActivationSet(xs.activations, None, "target", 1))
    assert p.source_stats == p.target_stats
    assert p.source_m_stats == p.target_m_stats


def test_two_sample_domain_mean_is_midpoint():
    c_s = np.array([[0.0, 2.0], [2.0, 0.0]])
    p = fit_probe_from_critiques(c_s, c_s + 5)
    np.testing.assert_array_equal(p.source_stats.mean, [1.0, 1.0])


def test_neither_with_prescribed_z_values():
    # diagonal stats place m_s = 1.0 and m_t = 4.0 for c = (1, 0)
    eye = np.eye(2)
    p = ProbeParams(
        GaussianStats(np.zeros(2), eye, eye, 0.0),
        GaussianStats(np.array([1.0, 2.0]), eye, eye, 0.0),
        ScalarStats(3.0, 5.0),   # z_s = |1 - 3| / 5 = 0.4
        ScalarStats(10.5, 5.0),  # z_t = |4 - 10.5| / 5 = 1.3
        0.1, 0.1,
    )
    r = route(p, np.array([1.0, 0.0]))
    assert (r.m_source, r.m_target) == (1.0, 4.0)
    assert r.membership.kind == "neither" and r.tie_broken and r.branch == "source"


def test_center_of_band_is_member():
    p = _unit_probe(mu_s=0.0, sig_s=0.3)
    assert membership(p, np.zeros(2)).in_source


def test_forced_routing_picks_a_single_head(tiny_models, tiny_acts):
    xs, xt = tiny_acts
    base = fit_probe(tiny_models, xs, xt)
    x = np.vstack([xs.activations[:20], xt.activations[:20]])
    all_source = base.with_lambdas(1e30, 1e-12)
    labels, routes = classify_batch(tiny_models, all_source, x)
    assert not routes.to_target.any()
    assert np.array_equal(labels, source_labels(tiny_models, x))
    all_target = base.with_lambdas(1e-12, 1e30)
    labels, routes = classify_batch(tiny_models, all_target, x)
    assert routes.to_target.all()
    assert np.array_equal(labels, target_labels(tiny_models, x))


def test_routing_is_invisible_with_degenerate_models(tiny_models, tiny_acts):
    xs, xt = tiny_acts
    twin = _twin_models(tiny_models)
    p = fit_probe(tiny_models, xs, xt)
    x = np.vstack([xs.activations[:30], xt.activations[:30]])
    labels, _ = classify_batch(twin, p, x)
    assert np.array_equal(labels, source_labels(twin, x))


@given(st.integers(0, 10_000), st.floats(0.5, 4.0), st.floats(0.5, 4.0))
@settings(max_examples=60, deadline=None)
def test_membership_matches_direct_inequalities(seed, lam_s, lam_t):
    rng = np.random.default_rng(seed)
    p, _, _ = _random_probe(rng, lam_s, lam_t)
    for c in rng.standard_normal((10, p.dim)) * 2:
        m_s = loop_quadratic_form(c.tolist(), p.source_stats.mean.tolist(), p.source_stats.precision.tolist())
        m_t = loop_quadratic_form(c.tolist(), p.target_stats.mean.tolist(), p.target_stats.precision.tolist())
        s, t = p.source_m_stats, p.target_m_stats
        got = membership(p, c)
        # skip points within rounding of a band edge
        edges = [s.mu - lam_s * s.sigma, s.mu + lam_s * s.sigma, t.mu - lam_t * t.sigma, t.mu + lam_t * t.sigma]
        if min(abs(m - e) for m in (m_s, m_t) for e in edges) < 1e-9 * (1 + abs(m_s) + abs(m_t)):
            continue
        assert got.in_source == (s.mu - lam_s * s.sigma <= m_s <= s.mu + lam_s * s.sigma)
        assert got.in_target == (t.mu - lam_t * t.sigma <= m_t <= t.mu + lam_t * t.sigma)


@given(st.integers(0, 10_000), st.floats(0.5, 3.0), st.floats(0.0, 3.0))
@settings(max_examples=60, deadline=None)
def test_membership_monotone_in_lambda(seed, lam, extra):
    rng = np.random.default_rng(seed)
    p, _, _ = _random_probe(rng, lam, lam)
    wider = p.with_lambdas(lam + extra, lam + extra)
    cs = rng.standard_normal((30, p.dim)) * 3
    narrow_r, wide_r = route_critiques(p, cs), route_critiques(wider, cs)
    assert not np.any(narrow_r.in_source & ~wide_r.in_source)
    assert not np.any(narrow_r.in_target & ~wide_r.in_target)
