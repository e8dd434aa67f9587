"""Trial harness shared by the CLI and the acceptance suite.

Every trial draws its own data and noise seeds from ``(seed, row, trial)``
so results do not depend on how trials are distributed over workers.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .components import quadrature_gains_from_pair
from .mleval import (ErrorEstimate, GaussianTask, aggregate, estimate_error_rate, gda_fit,
                     gda_predict, optimal_error_rate, sample_dataset)
from .perceptron import AmplifierSpec, PerceptronSpec, build_tunable_amplifier, run_training
from .sde import SimConfig, integrate, InputSchedule, probe_response, steady_state

__all__ = ["TrialResult", "trial_seeds", "run_trial", "run_trials", "benchmark_rows",
           "learning_rows", "amplifier_gain_rows"]


@dataclass(frozen=True)
class TrialResult:
    perceptron: ErrorEstimate
    gda: ErrorEstimate
    train_error: float


def trial_seeds(seed: int, row: int, trial: int) -> tuple[int, int]:
    """(data seed, noise seed) for one trial."""
    a, b = np.random.SeedSequence([int(seed), int(row), int(trial)]).generate_state(2, np.uint64)
    return int(a), int(b)


def run_trial(spec: PerceptronSpec, separation: float, M_train: int, M_test: int,
              data_seed: int, noise_seed: int, *, noise: bool = True, dt: float = 1e-3,
              record_stride: int = 100) -> TrialResult:
    task = GaussianTask.symmetric(spec.N, separation)
    X, y = sample_dataset(task, M_train + M_test, data_seed)
    split = (X[:M_train], y[:M_train], X[M_train:], y[M_train:])
    cfg = SimConfig(dt=dt, seed=noise_seed, noise_enabled=noise, record_stride=record_stride)
    run = run_training(spec, split, cfg)
    est = estimate_error_rate(run.labels_pred[M_train:], y[M_train:])
    if len(np.unique(y[:M_train])) == 2:
        gda = estimate_error_rate(gda_predict(gda_fit(X[:M_train], y[:M_train]), X[M_train:]), y[M_train:])
    else:
        gda = estimate_error_rate(np.full(M_test, int(y[:M_train][0]) if M_train else 1), y[M_train:])
    return TrialResult(est, gda, run.train_error_rate)


def _trial_job(args):
    spec, sep, M_train, M_test, seed, row, trial, noise, dt = args
    ds, ns = trial_seeds(seed, row, trial)
    return run_trial(spec, sep, M_train, M_test, ds, ns, noise=noise, dt=dt)


def run_trials(jobs: Sequence[tuple], workers: int | None = None) -> list[TrialResult]:
    """Run ``(spec, sep, M_train, M_test, seed, row, trial, noise, dt)`` jobs in order."""
    jobs = list(jobs)
    workers = workers or os.cpu_count() or 1
    if workers <= 1 or len(jobs) <= 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
        return list(ex.map(_trial_job, jobs))


def benchmark_rows(spec: PerceptronSpec, separations: Sequence[float], n_trials: int,
                   M_train: int, M_test: int, seed: int, *, noise: bool = True,
                   dt: float = 1e-3, workers: int | None = None) -> list[dict]:
    """Perceptron vs GDA vs Bayes error per separation."""
    jobs = [(spec, float(s), M_train, M_test, seed, r, t, noise, dt)
            for r, s in enumerate(separations) for t in range(n_trials)]
    res = run_trials(jobs, workers)
    rows = []
    for r, s in enumerate(separations):
        chunk = res[r * n_trials:(r + 1) * n_trials]
        p = aggregate([c.perceptron for c in chunk])
        g = aggregate([c.gda for c in chunk])
        rows.append(dict(separation=float(s), p_perceptron=p.p_err, sd_perceptron=p.sd,
                         p_gda=g.p_err, sd_gda=g.sd, p_optimal=optimal_error_rate(s),
                         n_trials=n_trials))
    return rows


def learning_rows(spec: PerceptronSpec, dt_samples: Sequence[float], alpha_sq: Sequence[float],
                  separation: float, n_trials: int, M_train: int, M_test: int, seed: int, *,
                  noise: bool = True, dt: float = 1e-3, workers: int | None = None) -> list[dict]:
    """Test error over a grid of sample durations and feedback intensities ``|alpha|^2``."""
    grid = [(float(d), float(a2)) for d in dt_samples for a2 in alpha_sq]
    jobs = []
    for r, (d, a2) in enumerate(grid):
        sp = replace(spec, dt_sample=d, synapse=replace(spec.synapse, alpha=math.sqrt(a2)))
        jobs += [(sp, separation, M_train, M_test, seed, r, t, noise, dt) for t in range(n_trials)]
    res = run_trials(jobs, workers)
    rows = []
    for r, (d, a2) in enumerate(grid):
        p = aggregate([c.perceptron for c in res[r * n_trials:(r + 1) * n_trials]])
        rows.append(dict(dt_sample=d, alpha_sq=a2, N_fb=a2 * d, p_err=p.p_err, sd=p.sd,
                         n_trials=n_trials))
    return rows


def amplifier_gain_rows(amp: AmplifierSpec, ratios: Sequence[float], *, simulate: bool = True,
                        probe: float = 1e-4, duration: float | None = None,
                        dt: float | None = None) -> list[dict]:
    """Analytic and probe-measured trimmed quadrature gains of the amplifier versus bias."""
    model = build_tunable_amplifier(amp) if simulate else None
    duration = duration if duration is not None else 40.0 * amp.g_max / amp.kappa_A
    dt = dt if dt is not None else 1e-3 / amp.kappa_A * 10
    rows = []
    state = None
    for r in ratios:
        eps = float(r) * amp.eps0_max
        gm, gp = amp.gains(eps)
        a = quadrature_gains_from_pair(gm, gp)
        row = dict(bias_ratio=float(r), g_rr=a.g_rr, g_ir=a.g_ir, g_ri=a.g_ri, g_ii=a.g_ii,
                   envelope=a.envelope, eps0=eps)
        if simulate:
            u = np.zeros(model.num_ports, complex)
            u[model.input_index("bias")] = eps
            if state is None:
                sch = InputSchedule.constant(model.input_labels, u, 50.0 / amp.kappa_A)
                state = integrate(model, sch, SimConfig(dt=dt, noise_enabled=False,
                                                        record_stride=10**9)).final_state
            state, _ = steady_state(model, u, state)
            sm, sp = probe_response(model, u, state, "sig", "sig",
                                    amplitude=probe * amp.eps0_max, duration=duration, dt=dt)
            s = quadrature_gains_from_pair(sm, sp)
            row.update(sim_g_rr=s.g_rr, sim_g_ir=s.g_ir, sim_g_ri=s.g_ri, sim_g_ii=s.g_ii)
        rows.append(row)
    return rows
