import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wignernet.components import (KerrParams, NopoParams, kerr_bias_to_state, kerr_cavity,
                                  laser_source, nopo, nopo_fixed_point, nopo_steady_state,
                                  nopo_threshold, phase_shifter)
from wignernet.sde import (Diverged, InputSchedule, NoConvergence, ScheduleError, SimConfig,
                           Trajectory, integrate, linear_response, run_ensemble, steady_state)

QUIET = dict(noise_enabled=False, record_stride=1)


def _cavity(kappa=1.0, Delta=0.0, chi=0.0):
    return kerr_cavity(KerrParams((kappa,), Delta, chi))


def test_schedule_validation():
    with pytest.raises(ScheduleError):
        InputSchedule(("a",), [0.0, 1.0, 1.0], [[1], [2]])
    with pytest.raises(ScheduleError):
        InputSchedule(("a",), [0.5, 1.0], [[1]])
    with pytest.raises(ScheduleError):
        InputSchedule(("a",), [0.0, 1.0], [[np.nan]])
    with pytest.raises(ScheduleError):
        InputSchedule.from_segments(("a",), [(0, 1, [1]), (1.5, 2, [1])])


def test_schedule_concat_and_lookup():
    s = InputSchedule.from_segments(("a",), [(0, 1, [1]), (1, 3, [2])])
    s2 = s.concat(InputSchedule.constant(("a",), 5, 1.0))
    assert s2.t_end == 4.0 and s2.num_segments == 3
    assert s2.amplitude_at(0.5)[0] == 1 and s2.amplitude_at(2.0)[0] == 2
    assert s2.amplitude_at(3.5)[0] == 5


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(record_stride=0)
    with pytest.raises(ValueError):
        SimConfig(seed=-1)


def test_static_model_passes_inputs_noiselessly():
    m = phase_shifter(0.0)
    sch = InputSchedule.from_segments(m.input_labels, [(0, 1, [1 + 1j]), (1, 2, [-2])])
    tr = integrate(m, sch, SimConfig(dt=0.01, **QUIET))
    out = tr.outputs[:, 0]
    assert np.allclose(out[tr.times < 1 - 1e-9], 1 + 1j)
    assert np.allclose(out[tr.times > 1 + 1e-9][:-1], -2)


def test_record_count():
    m = _cavity()
    tr = integrate(m, InputSchedule.constant(m.input_labels, 1.0, 1.0),
                   SimConfig(dt=1e-3, noise_enabled=False, record_stride=7))
    assert len(tr.times) == 1000 // 7 + 1


def test_linear_cavity_closed_form():
    m = _cavity()
    tr = integrate(m, InputSchedule.constant(m.input_labels, 1.0, 10.0),
                   SimConfig(dt=1e-3, **QUIET), [0j])
    exact = -2 * (1 - np.exp(-tr.times / 2))
    assert np.max(np.abs(tr.states[:, 0] - exact)) < 1e-4


def test_noiseless_kerr_first_order_convergence():
    m = _cavity(1.0, -0.5, 0.05)
    sch = InputSchedule.constant(m.input_labels, 2.0, 4.0)
    ref = integrate(m, sch, SimConfig(dt=1.25e-4, noise_enabled=False, record_stride=10**7), [0j])
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        tr = integrate(m, sch, SimConfig(dt=dt, noise_enabled=False, record_stride=10**7), [0j])
        errs.append(abs(tr.final_state[0] - ref.final_state[0]))
    r1, r2 = errs[0] / errs[1], errs[1] / errs[2]
    assert 1.6 < r1 < 2.5 and 1.6 < r2 < 2.5


def test_output_noise_increment_variance():
    # with stride 1 the recorded output is beta + dW/dt, so Var[Re] * dt = 1/4
    m = laser_source(0)
    n, dt = 10**6, 1e-2
    tr = integrate(m, InputSchedule.constant(m.input_labels, 0, n * dt),
                   SimConfig(dt=dt, seed=3, record_stride=1))
    x = tr.outputs[1:, 0]
    bound = 3 * 0.25 * math.sqrt(2 / x.size)
    assert abs(np.var(x.real) * dt - 0.25) < bound
    assert abs(np.var(x.imag) * dt - 0.25) < bound


def test_mean_output_channel_is_noise_free():
    m = _cavity()
    sch = InputSchedule.constant(m.input_labels, 0.5, 2.0)
    tr = integrate(m, sch, SimConfig(dt=1e-3, seed=1, record_stride=100))
    expect = np.array([m.outputs(s, [0.5])[0] for s in tr.states])
    assert np.allclose(tr.output(m.output_labels[0], mean=True), expect)


def test_determinism_and_seed_dependence():
    m = _cavity(1.0, 0.3, 0.02)
    sch = InputSchedule.constant(m.input_labels, 1.0, 2.0)
    a = integrate(m, sch, SimConfig(dt=1e-3, seed=11, record_stride=10))
    b = integrate(m, sch, SimConfig(dt=1e-3, seed=11, record_stride=10))
    c = integrate(m, sch, SimConfig(dt=1e-3, seed=12, record_stride=10))
    assert np.array_equal(a.states, b.states) and np.array_equal(a.outputs, b.outputs)
    assert not np.array_equal(a.states, c.states)


def test_divergence_is_reported():
    m = _cavity(1.0, 0.0, 0.0)
    unstable = type(m)(A=np.array([[5.0 + 0j]]), B=m.B, C=m.C, D=m.D, a=m.a, c=m.c,
                       input_labels=m.input_labels, output_labels=m.output_labels)
    with pytest.raises(Diverged):
        integrate(unstable, InputSchedule.constant(m.input_labels, 1.0, 10.0),
                  SimConfig(dt=1e-3, **QUIET), [1.0])


def test_trajectory_serialization_round_trip():
    m = _cavity(1.0, 0.2, 0.01)
    tr = integrate(m, InputSchedule.constant(m.input_labels, 1.0, 0.5),
                   SimConfig(dt=1e-3, seed=2, record_stride=50))
    back = Trajectory.from_bytes(tr.to_bytes())
    assert np.array_equal(back.states, tr.states) and np.array_equal(back.outputs, tr.outputs)
    assert back.seed == 2 and back.mode_labels == tr.mode_labels
    lines = tr.to_csv().strip().splitlines()
    assert lines[0].startswith("time,") and len(lines) == len(tr.times) + 1


def test_steady_state_linear_solve():
    m = _cavity(2.0, 0.7, 0.0)
    a, lam = steady_state(m, [0.3 - 0.1j])
    direct = -np.linalg.solve(m.A, m.a + m.B @ np.array([0.3 - 0.1j]))
    assert np.allclose(a, direct, atol=1e-12)
    assert lam < 0


def test_steady_state_recovers_bistable_roots():
    p = KerrParams((1.0,), -1.3, 0.01)
    m = kerr_cavity(p)
    eps = None
    for e in np.linspace(1, 20, 400):
        if len(kerr_bias_to_state(p, e)) == 3:
            eps = e
            break
    roots = [r.alpha for r in kerr_bias_to_state(p, eps)]
    found = [steady_state(m, [eps], [r * 1.01])[0][0] for r in roots]
    for r, f in zip(roots, found):
        assert abs(r - f) < 1e-9
    flags = [steady_state(m, [eps], [r])[1] < 0 for r in roots]
    assert flags == [r.stable for r in kerr_bias_to_state(p, eps)]


def test_steady_state_nopo_above_threshold():
    P = NopoParams(1.0, 2.0, 0.05)
    eps = -2 * nopo_threshold(P)
    m = nopo(P)
    guess = nopo_fixed_point(P, eps, 0.3) * np.array([1.1, 0.9, 1.0])
    a, _ = steady_state(m, [0, 0, eps], guess, frozen=())
    r = nopo_steady_state(P, eps).alpha_s_mag
    assert abs(abs(a[0]) - r) < 1e-10 and abs(abs(a[1]) - r) < 1e-10


def test_steady_state_no_convergence():
    m = _cavity(1.0, -1.3, 0.01)
    with pytest.raises(NoConvergence):
        steady_state(m, [10.0], [0j], max_iter=1)


def test_linear_response_matches_kerr_coefficients():
    from wignernet.components import kerr_reflection_coeffs
    p = KerrParams((1.0,), -0.77, 0.01)
    a0 = complex(6.0)
    c = kerr_reflection_coeffs(p, a0)
    gm, gp = linear_response(kerr_cavity(p), [c.eps0], np.array([a0]), 0, 0)
    assert np.isclose(gm, c.g_minus, atol=1e-9) and np.isclose(gp, c.g_plus, atol=1e-9)


def _vacuum_reducer(tr):
    a = tr.states[len(tr.times) // 2:, 0]
    return {"re": a.real, "im": a.imag}


def test_vacuum_variance():
    m = _cavity()
    sch = InputSchedule.constant(m.input_labels, 0.0, 40.0)
    cfg = SimConfig(dt=1e-3, seed=9, record_stride=1000)
    st_ = run_ensemble(m, sch, cfg, 200, _vacuum_reducer, initial_state=[0j])
    # pool the ensemble variance over the stationary half of the run
    for k in ("re", "im"):
        assert abs(np.mean(st_.variance[k]) - 0.25) < 0.025


def _final_reducer(tr):
    return {"x": np.array([tr.final_state[0].real, tr.final_state[0].imag])}


def test_ensemble_single_matches_integrate():
    m = _cavity(1.0, 0.1, 0.02)
    sch = InputSchedule.constant(m.input_labels, 1.0, 1.0)
    cfg = SimConfig(dt=1e-3, seed=4, record_stride=100)
    st_ = run_ensemble(m, sch, cfg, 1, _final_reducer, initial_state=[0j])
    tr = integrate(m, sch, cfg, [0j], index=0)
    assert np.array_equal(st_.mean["x"], [tr.final_state[0].real, tr.final_state[0].imag])


def test_ensemble_independent_of_workers():
    m = _cavity(1.0, 0.1, 0.02)
    sch = InputSchedule.constant(m.input_labels, 1.0, 0.5)
    cfg = SimConfig(dt=1e-3, seed=4, record_stride=100)
    a = run_ensemble(m, sch, cfg, 20, _final_reducer, initial_state=[0j], batch_size=4)
    b = run_ensemble(m, sch, cfg, 20, _final_reducer, initial_state=[0j], batch_size=4, workers=2)
    assert a.to_json() == b.to_json()
    with pytest.raises(ValueError):
        run_ensemble(m, sch, cfg, 0, _final_reducer)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 2.0), st.complex_numbers(max_magnitude=5)),
                min_size=1, max_size=4))
def test_static_output_depends_only_on_active_segment(segs):
    m = phase_shifter(0.4)
    t, rows = 0.0, []
    for dur, amp in segs:
        rows.append((t, t + round(dur, 2) + 0.01, [amp]))
        t = rows[-1][1]
    sch = InputSchedule.from_segments(m.input_labels, rows)
    tr = integrate(m, sch, SimConfig(dt=1e-3, **QUIET))
    # record k averages the output over the step that ends at times[k]
    for k, tk in enumerate(tr.times[1:], start=1):
        assert np.isclose(tr.outputs[k, 0], np.exp(0.4j) * sch.amplitude_at(tk - 5e-4)[0])
