from __future__ import annotations

import itertools
import math
import pickle

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import solve_ivp

from splitflow import core, euler, lorenz96
from splitflow.core import (
    EMPTY_REGION,
    WHOLE_SPACE,
    CycleProgram,
    RegionSpec,
    Splitting,
    VectorField,
    compose_cycle,
    entrance_event,
    estimate_entrance_probability,
    first_entrance,
    map_trials,
    run_chain,
    sample_cycle,
    step,
    substream,
)


class Zero(VectorField):
    label = "zero"

    def __call__(self, x):
        return np.zeros_like(x)

    def flow(self, x, t):
        return np.array(x, dtype=float)


class Blowup(VectorField):
    label = "blowup"

    def flow(self, x, t):
        with np.errstate(over="ignore"):
            return x * 1e200


def zero_splitting(m: int, dim: int = 2) -> Splitting:
    return Splitting(tuple(Zero() for _ in range(m)), dim)


def test_sample_cycle_single_field():
    p = sample_cycle(substream(0), 1, 0.3)
    assert list(p.sigma) == [0]
    assert p.tau.shape == (1,) and p.tau[0] > 0


@pytest.mark.parametrize("m, h", [(0, 1.0), (3, 0.0), (3, -1.0)])
def test_sample_cycle_rejects_bad_arguments(m, h):
    with pytest.raises(ValueError):
        sample_cycle(substream(0), m, h)


def test_duration_law():
    rng = substream(11)
    tau = np.concatenate([sample_cycle(rng, 5, 0.1).tau for _ in range(200_000)])
    assert tau.min() > 0
    per_field = tau.reshape(-1, 5).mean(axis=0)
    assert np.all(np.abs(per_field - 0.1) < 3 * 0.1 / math.sqrt(200_000))
    ks = stats.kstest(tau, "expon", args=(0, 0.1)).statistic
    assert ks < 0.002


def test_permutation_uniformity():
    rng = substream(12)
    n = 600_000
    cells = {p: i for i, p in enumerate(itertools.permutations(range(3)))}
    counts = np.zeros(6)
    for _ in range(n):
        counts[cells[tuple(rng.permutation(3))]] += 1
    assert np.all(np.abs(counts / n - 1 / 6) < 0.002)
    assert stats.chisquare(counts).statistic < stats.chi2.ppf(0.999, 5)


def test_permutation_uniformity_m5():
    rng = substream(13)
    n = 240_000
    cells = {p: i for i, p in enumerate(itertools.permutations(range(5)))}
    counts = np.zeros(120)
    for _ in range(n):
        counts[cells[tuple(sample_cycle(rng, 5, 1.0).sigma)]] += 1
    assert stats.chisquare(counts).statistic < stats.chi2.ppf(0.999, 119)


def test_compose_cycle_zero_durations_is_identity():
    s = lorenz96.splitting(lorenz96.Lorenz96System(5, 1.0))
    x = np.arange(1.0, 6.0)
    p = CycleProgram(np.arange(6), np.zeros(6))
    tr = compose_cycle(s, x, p)
    assert len(tr.intermediates) == 7
    np.testing.assert_array_equal(tr.output, x)
    assert tr.intermediates[0] is not None and np.array_equal(tr.intermediates[0], x)


def test_compose_cycle_rotations_preserve_norm():
    sys_ = lorenz96.Lorenz96System(6, 1.0)
    s = lorenz96.splitting(sys_)
    x = np.array([3.0, -1.0, 2.0, 0.5, 4.0, -2.5])
    sigma = np.array([2, 0, 5, 3, 6, 1, 4])  # star field (index 6) fires fifth
    tr = compose_cycle(s, x, CycleProgram(sigma, np.full(7, 0.7)))
    for k in range(5):
        assert np.linalg.norm(tr.intermediates[k]) == pytest.approx(np.linalg.norm(x), rel=1e-13)


def test_compose_cycle_single_field_matches_integrator():
    sys_ = lorenz96.Lorenz96System(4, [1.0, -0.5, 2.0, 0.3])
    s = Splitting((lorenz96.StarField(sys_),), 4)
    x = np.array([0.4, -1.2, 2.2, 0.1])
    out = compose_cycle(s, x, CycleProgram(np.array([0]), np.array([1.0]))).output
    ref = solve_ivp(lambda t, y: lorenz96.star_field(sys_, y), (0, 1), x, method="DOP853", rtol=1e-12, atol=1e-14).y[:, -1]
    np.testing.assert_allclose(out, ref, rtol=1e-9)


def test_compose_cycle_keep_false_stores_endpoints():
    s = lorenz96.splitting(lorenz96.Lorenz96System(4, 1.0))
    p = sample_cycle(substream(1), s.m, 0.5)
    x = np.ones(4)
    full = compose_cycle(s, x, p)
    lean = compose_cycle(s, x, p, keep=False)
    assert len(lean.intermediates) == 2
    np.testing.assert_array_equal(lean.output, full.output)


def test_overflow_raises_with_field_id():
    s = Splitting((Zero(), Blowup()), 2)
    with pytest.raises(core.NumericOverflowError) as info:
        compose_cycle(s, np.array([1e150, 1.0]), CycleProgram(np.array([0, 1]), np.ones(2)))
    assert info.value.field_id == 1
    assert info.value.label == "blowup"


def test_step_is_deterministic_per_seed():
    s = lorenz96.splitting(lorenz96.Lorenz96System(4, 1.0))
    x = np.array([1.0, 2.0, -3.0, 0.5])
    a = step(s, x, substream(42), 0.1)
    b = step(s, x, substream(42), 0.1)
    for u, v in zip(a.intermediates, b.intermediates):
        assert np.array_equal(u, v)


def test_step_respects_subconservation_bound():
    sys_ = lorenz96.Lorenz96System(4, 1.0)
    s = lorenz96.splitting(sys_)
    x0 = np.array([3.0, -1.0, 2.0, 0.5])
    rng = substream(1)
    x = x0
    tau_max = 0.0
    for _ in range(1000):
        tr = step(s, x, rng, 0.05, keep=False)
        tau_max = max(tau_max, float(tr.program.tau.max()))
        x = tr.output
    assert np.all(np.isfinite(x))
    assert lorenz96.lyapunov_H(x) <= lorenz96.lyapunov_H(x0) + 1000 * sys_.beta_norm * tau_max


def test_euler_without_forcing_or_damping_conserves_H():
    sys_ = euler.EulerSystem(4)
    s = euler.splitting(sys_)
    q0 = substream(5).standard_normal(sys_.dim)
    traj = run_chain(s, q0, 5, substream(6), 0.3)
    H = [euler.lyapunov_H(q) for q in traj.states]
    np.testing.assert_allclose(H, H[0], rtol=1e-12)


def test_run_chain_zero_steps():
    s = zero_splitting(2)
    traj = run_chain(s, np.array([1.0, 2.0]), 0, substream(0), 1.0)
    assert traj.states.shape == (1, 2)


def test_run_chain_rejects_negative_steps():
    with pytest.raises(ValueError):
        run_chain(zero_splitting(2), np.zeros(2), -1, substream(0), 1.0)


def test_run_chain_reproducible_and_traces():
    s = lorenz96.splitting(lorenz96.Lorenz96System(4, 1.0))
    x0 = np.array([1.0, 0.0, 0.0, 0.0])
    a = run_chain(s, x0, 50, substream(9), 0.1, keep_intermediates=True)
    b = run_chain(s, x0, 50, substream(9), 0.1)
    np.testing.assert_array_equal(a.states, b.states)
    assert len(a.traces) == 50 and b.traces is None
    np.testing.assert_array_equal(a.traces[-1].output, a.states[-1])


def test_lorenz_chain_returns_to_small_sublevel():
    s = lorenz96.splitting(lorenz96.Lorenz96System(6, 1.0))
    x0 = np.full(6, 1e3 / math.sqrt(6))
    traj = run_chain(s, x0, 10_000, substream(3), 0.05)
    assert np.min([lorenz96.lyapunov_H(x) for x in traj.states]) < 100


def test_entrance_event_cases():
    s = zero_splitting(3)
    x = np.zeros(2)
    hit = compose_cycle(s, x, CycleProgram(np.array([1, 0, 2]), np.ones(3)))
    assert entrance_event(hit, WHOLE_SPACE, 1)
    assert not entrance_event(hit, WHOLE_SPACE, 0)
    assert not entrance_event(hit, EMPTY_REGION, 1)


def test_entrance_event_uses_first_entry():
    s = lorenz96.splitting(lorenz96.Lorenz96System(4, 1.0))
    D = RegionSpec(lambda x: x[0] > 0.5, "x1 > 1/2")
    x = np.array([0.0, 1.0, 0.0, 0.0])
    p = CycleProgram(np.array([4, 1, 0, 2, 3]), np.array([1.0, 1.0, 1.0, 1.0, 1.0]))
    tr = compose_cycle(s, x, p)
    k = first_entrance(s, x, p, D)
    assert k is not None and tr.intermediates[k] in D
    assert all(tr.intermediates[i] not in D for i in range(k))
    assert entrance_event(tr, D, int(p.sigma[k]))


def test_entrance_whole_space_exact_enumeration():
    # over all permutations, sigma[0] equals ell in exactly (m-1)! of m! cases
    m = 4
    s = zero_splitting(m)
    hits = 0
    perms = list(itertools.permutations(range(m)))
    for perm in perms:
        tr = compose_cycle(s, np.zeros(2), CycleProgram(np.array(perm), np.ones(m)))
        hits += entrance_event(tr, WHOLE_SPACE, 2)
    assert hits / len(perms) == 1 / m


def test_estimate_entrance_empty_region():
    est = estimate_entrance_probability(zero_splitting(4), np.zeros(2), EMPTY_REGION, 0, 500, 1, 1.0)
    assert est.estimate == 0.0 and est.halfwidth == 0.0


def test_estimate_entrance_whole_space_binomial():
    est = estimate_entrance_probability(zero_splitting(4), np.zeros(2), WHOLE_SPACE, 3, 100_000, 2, 1.0)
    assert abs(est.estimate - 0.25) < 0.005
    assert est.trials == 100_000


def test_conditional_estimator_is_exact_on_whole_space():
    est = estimate_entrance_probability(zero_splitting(4), np.zeros(2), WHOLE_SPACE, 3, 50, 2, 1.0, conditional=True)
    assert est.estimate == 0.25 and est.halfwidth == 0.0


def test_conditional_and_frequency_estimators_agree():
    sys_ = lorenz96.Lorenz96System(4, 1.0)
    s = lorenz96.splitting(sys_)
    x = np.array([0.1, 3.0, -2.0, 1.0])
    D = lorenz96.dissipative_region(0.2)
    freq = estimate_entrance_probability(s, x, D, 4, 40_000, 8, 0.5)
    cond = estimate_entrance_probability(s, x, D, 4, 40_000, 9, 0.5, conditional=True)
    assert abs(freq.estimate - cond.estimate) < 3 * math.hypot(freq.se, cond.se)
    assert cond.se < freq.se


def _draw(rng, i, scale):
    return float(rng.random()) * scale + i


def test_map_trials_independent_of_worker_count(monkeypatch):
    monkeypatch.setenv("SPLITFLOW_WORKERS", "1")
    one = map_trials(_draw, 37, 5, (2.0,))
    monkeypatch.setenv("SPLITFLOW_WORKERS", "3")
    three = map_trials(_draw, 37, 5, (2.0,))
    assert one == three


@pytest.mark.parametrize("raw", ["0", "-2", "many"])
def test_worker_count_rejects_bad_values(monkeypatch, raw):
    monkeypatch.setenv("SPLITFLOW_WORKERS", raw)
    with pytest.raises(ValueError):
        core.worker_count()


def test_substreams_differ_and_repeat():
    a = substream(1, 0).random(4)
    b = substream(1, 1).random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, substream(1, 0).random(4))


@pytest.mark.parametrize(
    "region, dim",
    [
        (WHOLE_SPACE, 4),
        (EMPTY_REGION, 4),
        (lorenz96.dissipative_region(0.3), 4),
        (euler.dissipative_region(euler.EulerSystem(4, {(1, 0): 1.0}), 0.05), 48),
    ],
)
def test_regions_are_picklable(region, dim):
    clone = pickle.loads(pickle.dumps(region))
    for x in (np.ones(dim), np.eye(dim)[0]):
        assert (x in clone) == (x in region)
