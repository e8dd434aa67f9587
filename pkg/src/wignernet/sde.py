"""Euler-Maruyama integration of Wigner-method Langevin equations.

Every external input carries vacuum shot noise: independent complex white
noise with ``<eta_{j,s}(t) eta_{k,r}(t')> = delta_jk delta_sr delta(t-t') / 4``.
Over one step the increment of input ``j`` is ``(N1 + i N2) sqrt(dt/4)``.

Each trajectory draws its noise from its own counter-based Philox stream,
keyed by ``(seed, trajectory index)``, so ensembles are reproducible
independently of batching and worker count.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .circuit import CircuitModel

__all__ = [
    "SimulationError", "Diverged", "NoConvergence", "ScheduleError",
    "InputSchedule", "SimConfig", "Trajectory", "EnsembleStats",
    "integrate", "integrate_batch", "steady_state", "run_ensemble",
    "linear_response", "trajectory_rng", "DIVERGENCE_LIMIT",
]

DIVERGENCE_LIMIT = 1e9
GENERATOR_ID = "numpy.Philox(SeedSequence(seed, spawn_key=(index,)))"
_NOISE_BLOCK = 4096


class SimulationError(Exception):
    pass


class Diverged(SimulationError):
    """A mode amplitude exceeded the divergence limit."""

    def __init__(self, msg, step=None, trajectory=None, state=None):
        super().__init__(msg)
        self.step = step
        self.trajectory = trajectory
        self.state = state


class NoConvergence(SimulationError):
    pass


class ScheduleError(ValueError):
    pass


# --------------------------------------------------------------------------
# Schedules and configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InputSchedule:
    """Piecewise-constant coherent drive on the external inputs.

    ``amplitudes[k]`` holds the drive of every port on ``[times[k], times[k+1])``.
    """

    port_names: tuple[str, ...]
    times: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, float).reshape(-1)
        amps = np.asarray(self.amplitudes, complex)
        nseg = max(times.size - 1, 0)
        amps = amps.reshape(nseg, len(self.port_names))
        if times.size and times[0] != 0.0:
            raise ScheduleError("schedule must start at t=0")
        if np.any(np.diff(times) <= 0):
            raise ScheduleError("segment boundaries must increase")
        if not np.all(np.isfinite(amps)):
            raise ScheduleError("non-finite drive amplitude")
        times.setflags(write=False)
        amps.setflags(write=False)
        object.__setattr__(self, "port_names", tuple(self.port_names))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def constant(cls, port_names, amplitude, t_end) -> "InputSchedule":
        amp = np.broadcast_to(np.asarray(amplitude, complex), (len(port_names),))
        return cls(tuple(port_names), np.array([0.0, float(t_end)]), amp[None, :])

    @classmethod
    def from_segments(cls, port_names, segments) -> "InputSchedule":
        """Build from ``(t_start, t_end, amplitudes)`` triples; they must tile ``[0, T]``."""
        segments = list(segments)
        if not segments:
            return cls(tuple(port_names), np.zeros(1), np.zeros((0, len(port_names))))
        times = [segments[0][0]]
        for t0, t1, _ in segments:
            if t0 != times[-1]:
                raise ScheduleError("segments must be contiguous")
            times.append(t1)
        return cls(tuple(port_names), np.array(times, float),
                   np.array([np.asarray(s[2], complex) for s in segments]))

    @property
    def t_end(self) -> float:
        return float(self.times[-1]) if self.times.size else 0.0

    @property
    def num_segments(self) -> int:
        return self.amplitudes.shape[0]

    def segments(self):
        for k in range(self.num_segments):
            yield float(self.times[k]), float(self.times[k + 1]), self.amplitudes[k]

    def concat(self, other: "InputSchedule") -> "InputSchedule":
        if other.port_names != self.port_names:
            raise ScheduleError("port names differ")
        if other.num_segments == 0:
            return self
        if self.num_segments == 0:
            return other
        times = np.concatenate([self.times, self.t_end + other.times[1:]])
        return InputSchedule(self.port_names, times, np.vstack([self.amplitudes, other.amplitudes]))

    def amplitude_at(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.amplitudes[min(max(k, 0), self.num_segments - 1)]


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    t_end: float | None = None
    seed: int = 0
    noise_enabled: bool = True
    record_stride: int = 1
    recorded_outputs: tuple[str, ...] | None = None
    recorded_modes: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(eq=False)
class Trajectory:
    """Recorded internal states and outputs.

    ``outputs`` average the noisy output field over each record interval;
    ``mean_outputs`` is the noise-free channel ``C alpha + c + D beta_coh``
    sampled at the record times.
    """

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    mean_outputs: np.ndarray
    mode_labels: tuple[str, ...]
    output_labels: tuple[str, ...]
    seed: int = 0
    index: int = 0
    generator: str = GENERATOR_ID
    final_state: np.ndarray | None = None

    def state(self, label: str) -> np.ndarray:
        return self.states[:, self.mode_labels.index(label)]

    def output(self, label: str, mean: bool = False) -> np.ndarray:
        arr = self.mean_outputs if mean else self.outputs
        return arr[:, self.output_labels.index(label)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        head = ["time"]
        for lab in self.mode_labels:
            head += [f"re({lab})", f"im({lab})"]
        for lab in self.output_labels:
            head += [f"re(out:{lab})", f"im(out:{lab})"]
        w.writerow(head)
        for k, t in enumerate(self.times):
            row = [repr(float(t))]
            for z in self.states[k]:
                row += [repr(float(z.real)), repr(float(z.imag))]
            for z in self.outputs[k]:
                row += [repr(float(z.real)), repr(float(z.imag))]
            w.writerow(row)
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        """Compact record: ``WGNR1`` magic, JSON header length + header, LE doubles."""
        header = json.dumps({
            "seed": int(self.seed), "index": int(self.index), "generator": self.generator,
            "records": int(self.times.size), "modes": list(self.mode_labels),
            "outputs": list(self.output_labels),
            "layout": "time, (re, im) per mode, (re, im) per output, (re, im) per mean output",
        }).encode()
        R = self.times.size
        body = np.hstack([self.times[:, None],
                          _ri(self.states).reshape(R, -1),
                          _ri(self.outputs).reshape(R, -1),
                          _ri(self.mean_outputs).reshape(R, -1)]).astype("<f8")
        return b"WGNR1" + struct.pack("<I", len(header)) + header + body.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Trajectory":
        if blob[:5] != b"WGNR1":
            raise ValueError("not a WGNR1 record")
        (hlen,) = struct.unpack("<I", blob[5:9])
        header = json.loads(blob[9:9 + hlen])
        R, m, r = header["records"], len(header["modes"]), len(header["outputs"])
        body = np.frombuffer(blob[9 + hlen:], "<f8").reshape(R, 1 + 2 * m + 4 * r)
        cplx = lambda x: x[:, 0::2] + 1j * x[:, 1::2]
        return cls(times=body[:, 0].copy(), states=cplx(body[:, 1:1 + 2 * m]),
                   outputs=cplx(body[:, 1 + 2 * m:1 + 2 * m + 2 * r]),
                   mean_outputs=cplx(body[:, 1 + 2 * m + 2 * r:]),
                   mode_labels=tuple(header["modes"]), output_labels=tuple(header["outputs"]),
                   seed=header["seed"], index=header["index"], generator=header["generator"])


def _ri(z):
    return np.stack([z.real, z.imag], axis=-1)


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream for trajectory ``index`` of ensemble ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(index),))))


# --------------------------------------------------------------------------
# Compiled kernel
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _Compiled:
    m: int
    n: int
    A: tuple
    Adiag: np.ndarray
    B: tuple
    a: np.ndarray
    k1_modes: np.ndarray
    k1_par: np.ndarray
    k2_modes: np.ndarray
    k2_par: np.ndarray
    op_modes: np.ndarray
    op_par: np.ndarray


def _csr(M) -> tuple:
    S = sp.csr_matrix(np.asarray(M, complex))
    S.eliminate_zeros()
    return (S.data.astype(complex), S.indices.astype(np.int64), S.indptr.astype(np.int64))


def _compile(model: CircuitModel) -> _Compiled:
    k1m, k1p, k2m, k2p, opm, opp = [], [], [], [], [], []
    for nl in model.nonlinearities:
        if nl.kind == "kerr1":
            k1m.append(nl.modes); k1p.append(nl.params)
        elif nl.kind == "kerr2":
            k2m.append(nl.modes); k2p.append(nl.params)
        else:
            opm.append(nl.modes); opp.append(nl.params)
    arr = lambda x, w, dt: np.array(x, dt).reshape(-1, w)
    return _Compiled(
        m=model.num_modes, n=model.num_ports,
        A=_csr(np.asarray(model.A) - np.diag(np.diag(model.A))), Adiag=np.diag(model.A).astype(complex),
        B=_csr(model.B),
        a=np.array(model.a, complex),
        k1_modes=arr(k1m, 1, np.int64), k1_par=arr(k1p, 1, float),
        k2_modes=arr(k2m, 2, np.int64), k2_par=arr(k2p, 3, float),
        op_modes=arr(opm, 3, np.int64), op_par=arr(opp, 1, float),
    )


@numba.njit(cache=True, fastmath=False)
def _drift_into(out, lam, x, Ad, Ai, Ap, a, Adiag, k1m, k1p, k2m, k2p, opm, opp):
    """Split drift: ``lam`` gets the diagonal rate (linear plus Kerr
    detuning), ``out`` everything else."""
    m = x.shape[0]
    for i in range(m):
        s = a[i]
        for p in range(Ap[i], Ap[i + 1]):
            s += Ad[p] * x[Ai[p]]
        out[i] = s
        lam[i] = Adiag[i]
    for q in range(k1m.shape[0]):
        k = k1m[q, 0]
        z = x[k]
        lam[k] += -1j * k1p[q, 0] * (z.real * z.real + z.imag * z.imag)
    for q in range(k2m.shape[0]):
        k1 = k2m[q, 0]
        k2 = k2m[q, 1]
        z1 = x[k1]
        z2 = x[k2]
        n1 = z1.real * z1.real + z1.imag * z1.imag
        n2 = z2.real * z2.real + z2.imag * z2.imag
        lam[k1] += -1j * (k2p[q, 0] * n1 + k2p[q, 2] * n2)
        lam[k2] += -1j * (k2p[q, 2] * n1 + k2p[q, 1] * n2)
    for q in range(opm.shape[0]):
        s_ = opm[q, 0]
        i_ = opm[q, 1]
        p_ = opm[q, 2]
        chi = opp[q, 0]
        zs = x[s_]
        zi = x[i_]
        zp = x[p_]
        out[s_] += chi * np.conj(zi) * zp
        out[i_] += chi * np.conj(zs) * zp
        out[p_] += -chi * zs * zi


@numba.njit(cache=True)
def _run_block(alpha, nsteps, step0, dt, bdrive, noise, use_noise, E, Phi, nldiag,
               Ad, Ai, Ap, a, Adiag, Bd, Bi, Bp, k1m, k1p, k2m, k2p, opm, opp,
               Cd, Ci, Cp, crec, Dd, Di, Dp, drive_in, stride,
               rec_modes, rec_states, rec_out, rec_mean, acc, limit):
    """Advance every trajectory of a batch by ``nsteps`` Euler-Maruyama steps.

    The diagonal rate ``lam_i`` (``A_ii`` plus any self/cross-Kerr detuning
    of mode i, frozen over the step) is propagated exactly with
    ``E = exp(lam dt)`` and ``Phi = (E - 1) / lam``; the remaining drift and
    the noise take a plain Euler step.  Fixed points of the map coincide
    with those of the continuous drift.

    Returns (-1, -1) on success, otherwise (trajectory, global step) of the
    first divergence.
    """
    nb, m = alpha.shape
    nr = crec.shape[0]
    f = np.empty(m, dtype=np.complex128)
    lam = np.empty(m, dtype=np.complex128)
    x = np.empty(m, dtype=np.complex128)
    for b in range(nb):
        for i in range(m):
            x[i] = alpha[b, i]
        for k in range(nsteps):
            gstep = step0 + k
            # output field averaged over the record interval (pre-update state)
            for r in range(nr):
                s = crec[r]
                for p in range(Cp[r], Cp[r + 1]):
                    s += Cd[p] * x[Ci[p]]
                for p in range(Dp[r], Dp[r + 1]):
                    j = Di[p]
                    v = drive_in[b, j]
                    if use_noise:
                        v += noise[b, k, j] / dt
                    s += Dd[p] * v
                acc[b, r] += s
            _drift_into(f, lam, x, Ad, Ai, Ap, a, Adiag, k1m, k1p, k2m, k2p, opm, opp)
            for i in range(m):
                if nldiag[i]:
                    z = lam[i] * dt
                    e = np.exp(z)
                    if abs(z) < 1e-8:
                        ph = dt * (1.0 + 0.5 * z)
                    else:
                        ph = (e - 1.0) / lam[i]
                    x[i] = e * x[i] + ph * (f[i] + bdrive[b, i])
                else:
                    x[i] = E[i] * x[i] + Phi[i] * (f[i] + bdrive[b, i])
            if use_noise:
                for i in range(m):
                    s = 0j
                    for p in range(Bp[i], Bp[i + 1]):
                        s += Bd[p] * noise[b, k, Bi[p]]
                    x[i] += s
            for i in range(m):
                if not (abs(x[i]) < limit):
                    for ii in range(m):
                        alpha[b, ii] = x[ii]
                    return b, gstep
            if (gstep + 1) % stride == 0:
                ridx = (gstep + 1) // stride
                for q in range(rec_modes.shape[0]):
                    rec_states[b, ridx, q] = x[rec_modes[q]]
                for r in range(nr):
                    rec_out[b, ridx, r] = acc[b, r] / stride
                    acc[b, r] = 0j
                    s = crec[r]
                    for p in range(Cp[r], Cp[r + 1]):
                        s += Cd[p] * x[Ci[p]]
                    for p in range(Dp[r], Dp[r + 1]):
                        s += Dd[p] * drive_in[b, Di[p]]
                    rec_mean[b, ridx, r] = s
        for i in range(m):
            alpha[b, i] = x[i]
    return -1, -1


def _schedule_for(model: CircuitModel, schedule: InputSchedule) -> np.ndarray:
    """Drive amplitudes reordered to the model's input order, ``(nseg, [batch,] n)``."""
    amps = np.asarray(schedule.amplitudes)
    names = list(schedule.port_names)
    if sorted(names) != sorted(model.input_labels) or len(names) != model.num_ports:
        missing = set(model.input_labels) ^ set(names)
        raise ScheduleError(f"schedule ports do not match model inputs: {sorted(missing)[:8]}")
    order = [names.index(lab) for lab in model.input_labels]
    return amps[..., order]


def _step_grid(schedule: InputSchedule, dt: float) -> np.ndarray:
    steps = np.rint(schedule.times / dt).astype(np.int64)
    if np.any(np.abs(steps * dt - schedule.times) > 1e-9 * np.maximum(1.0, schedule.times)):
        raise ScheduleError("segment boundaries must be multiples of dt")
    return steps


def integrate_batch(model: CircuitModel, schedule: InputSchedule, config: SimConfig,
                    indices: Sequence[int], initial_states=None, drives=None) -> list[Trajectory]:
    """Integrate several trajectories in one vectorized pass.

    ``drives`` optionally overrides the schedule amplitudes per trajectory,
    with shape ``(batch, nseg, n_ports)`` in schedule port order; the
    schedule then only supplies the time grid.
    """
    comp = _compile(model)
    nb, m, n = len(indices), comp.m, comp.n
    dt = float(config.dt)
    steps = _step_grid(schedule, dt)
    if config.t_end is not None and abs(config.t_end - schedule.t_end) > 1e-9 * max(1.0, schedule.t_end):
        raise ScheduleError("config.t_end does not match the schedule")
    total = int(steps[-1]) if steps.size else 0
    stride = int(config.record_stride)
    nrec = total // stride + 1

    if drives is None:
        drv = np.broadcast_to(_schedule_for(model, schedule)[:, None, :], (schedule.num_segments, nb, n))
    else:
        tmp = InputSchedule(schedule.port_names, schedule.times, np.zeros((schedule.num_segments, n)))
        _schedule_for(model, tmp)
        order = [list(schedule.port_names).index(lab) for lab in model.input_labels]
        drv = np.transpose(np.asarray(drives, complex)[..., order], (1, 0, 2))
    drv = np.ascontiguousarray(drv)

    rec_outs = list(config.recorded_outputs) if config.recorded_outputs is not None else list(model.output_labels)
    rows = [model.output_index(lab) for lab in rec_outs]
    rec_modes_l = list(config.recorded_modes) if config.recorded_modes is not None else list(model.mode_labels)
    rec_modes = np.array([model.mode_index(lab) for lab in rec_modes_l], np.int64)
    Cd, Ci, Cp = _csr(model.C[rows, :].reshape(len(rows), m))
    Dd, Di, Dp = _csr(model.D[rows, :].reshape(len(rows), n))
    crec = np.array(model.c[rows], complex)

    if initial_states is None:
        alpha = np.zeros((nb, m), complex)
    else:
        alpha = np.array(np.broadcast_to(np.asarray(initial_states, complex), (nb, m)))
    rec_states = np.zeros((nb, nrec, rec_modes.size), complex)
    rec_out = np.zeros((nb, nrec, len(rows)), complex)
    rec_mean = np.zeros((nb, nrec, len(rows)), complex)
    rec_states[:, 0, :] = alpha[:, rec_modes]
    acc = np.zeros((nb, len(rows)), complex)

    lam = comp.Adiag * dt
    E = np.exp(lam)
    small = np.abs(lam) < 1e-8
    Phi = np.where(small, dt * (1 + lam / 2), (E - 1) / np.where(small, 1, comp.Adiag))
    nldiag = np.zeros(m, np.bool_)
    nldiag[comp.k1_modes.ravel()] = True
    nldiag[comp.k2_modes.ravel()] = True

    rngs = [trajectory_rng(config.seed, i) for i in indices]
    Bmat = np.asarray(model.B)
    empty_noise = np.zeros((nb, 0, n), complex)
    if schedule.num_segments:
        d0 = drv[0]
        rec_mean[:, 0, :] = alpha @ model.C[rows, :].T + crec + d0 @ model.D[rows, :].T
        rec_out[:, 0, :] = rec_mean[:, 0, :]

    for seg in range(schedule.num_segments):
        drive_in = np.ascontiguousarray(drv[seg])
        bdrive = drive_in @ Bmat.T
        s = int(steps[seg])
        while s < steps[seg + 1]:
            nsteps = int(min(steps[seg + 1] - s, _NOISE_BLOCK - (s % _NOISE_BLOCK)))
            if config.noise_enabled:
                noise = np.empty((nb, nsteps, n), complex)
                scale = np.sqrt(dt / 4)
                for b, rng in enumerate(rngs):
                    z = rng.standard_normal((nsteps, n, 2))
                    noise[b] = (z[..., 0] + 1j * z[..., 1]) * scale
            else:
                noise = empty_noise
            bad_b, bad_step = _run_block(
                alpha, nsteps, s, dt, bdrive, noise, config.noise_enabled, E, Phi, nldiag,
                *comp.A, comp.a, comp.Adiag, *comp.B, comp.k1_modes, comp.k1_par, comp.k2_modes, comp.k2_par,
                comp.op_modes, comp.op_par, Cd, Ci, Cp, crec, Dd, Di, Dp, drive_in, stride,
                rec_modes, rec_states, rec_out, rec_mean, acc, DIVERGENCE_LIMIT)
            if bad_b >= 0:
                raise Diverged(f"trajectory {indices[bad_b]} diverged at step {bad_step} "
                               f"(t={bad_step * dt:.6g})", step=int(bad_step),
                               trajectory=int(indices[bad_b]), state=alpha[bad_b].copy())
            s += nsteps

    times = np.arange(nrec) * stride * dt
    out_labels = tuple(rec_outs)
    return [Trajectory(times=times, states=rec_states[b], outputs=rec_out[b], mean_outputs=rec_mean[b],
                       mode_labels=tuple(rec_modes_l), output_labels=out_labels, seed=int(config.seed),
                       index=int(idx), final_state=alpha[b].copy())
            for b, idx in enumerate(indices)]


def integrate(model: CircuitModel, schedule: InputSchedule, config: SimConfig,
              initial_state=None, index: int = 0) -> Trajectory:
    """Integrate one trajectory (noise stream ``(config.seed, index)``)."""
    return integrate_batch(model, schedule, config, [index], initial_state)[0]


# --------------------------------------------------------------------------
# Noiseless steady states
# --------------------------------------------------------------------------

def _real_jacobian(P, Q):
    return np.block([[(P + Q).real, -(P - Q).imag], [(P + Q).imag, (P - Q).real]])


def steady_state(model: CircuitModel, const_input, guess=None, *, frozen: Sequence[int] = (),
                 tol: float = 1e-12, max_iter: int = 200):
    """Newton iteration for a noiseless fixed point.

    Modes listed in ``frozen`` are held at their ``guess`` values (used to
    clamp a NOPO on its phase manifold).  Returns ``(state, max_real_eig)``;
    the eigenvalue is that of the free-mode Jacobian, so a negative value
    means linearly stable (zero modes from continuous symmetries count as
    marginal).
    """
    m = model.num_modes
    beta = np.asarray(const_input, complex).reshape(model.num_ports)
    x = np.zeros(m, complex) if guess is None else np.array(guess, complex).reshape(m)
    free = np.array([k for k in range(m) if k not in set(frozen)], int)
    if free.size == 0:
        return x, -np.inf
    bdrive = model.B @ beta + model.a

    def F(z):
        return (model.A @ z + bdrive + model.A_NL(z))[free]

    def converged(z, fz):
        # absolute target, relaxed only by the roundoff floor of large drives
        scale = np.abs(model.A @ z).max(initial=0) + np.abs(bdrive).max(initial=0) + np.abs(model.A_NL(z)).max(initial=0)
        return np.abs(fz).max() <= max(tol, 1e-15 * scale)

    f = F(x)
    for _ in range(max_iter):
        if converged(x, f):
            break
        P, Q = model.jacobian(x)
        J = _real_jacobian(P[np.ix_(free, free)], Q[np.ix_(free, free)])
        rhs = -np.concatenate([f.real, f.imag])
        step = np.linalg.lstsq(J, rhs, rcond=None)[0]
        dz = step[:free.size] + 1j * step[free.size:]
        t, fn0 = 1.0, np.abs(f).max()
        while True:
            xn = x.copy()
            xn[free] += t * dz
            fn = F(xn)
            if np.abs(fn).max() < fn0 or t < 1e-6:
                break
            t *= 0.5
        x, f = xn, fn
    else:
        raise NoConvergence(f"Newton did not converge in {max_iter} iterations "
                            f"(|drift|={np.abs(f).max():.3g})")
    if not converged(x, f):
        raise NoConvergence(f"Newton stalled at |drift|={np.abs(f).max():.3g}")
    P, Q = model.jacobian(x)
    J = _real_jacobian(P[np.ix_(free, free)], Q[np.ix_(free, free)])
    return x, float(np.linalg.eigvals(J).real.max())


def linear_response(model: CircuitModel, const_input, state, in_port, out_port, *,
                    frozen: Sequence[int] = ()) -> tuple[complex, complex]:
    """Small-signal response ``d(out) = g_minus d(in) + g_plus conj(d(in))``.

    Linearizes about a steady ``state`` of the noiseless drift (with modes in
    ``frozen`` held fixed) and solves the static real system exactly.
    Ports are given by label or index.
    """
    j = model.input_index(in_port) if isinstance(in_port, str) else int(in_port)
    k = model.output_index(out_port) if isinstance(out_port, str) else int(out_port)
    m = model.num_modes
    free = np.array([q for q in range(m) if q not in set(frozen)], int)
    resp = []
    for d in (1.0, 1j):
        dal = np.zeros(m, complex)
        if free.size:
            P, Q = model.jacobian(np.asarray(state, complex))
            J = _real_jacobian(P[np.ix_(free, free)], Q[np.ix_(free, free)])
            rhs = -model.B[free, j] * d
            sol = np.linalg.solve(J, np.concatenate([rhs.real, rhs.imag]))
            dal[free] = sol[:free.size] + 1j * sol[free.size:]
        resp.append(model.C[k] @ dal + model.D[k, j] * d)
    r1, ri = resp
    return complex((r1 - 1j * ri) / 2), complex((r1 + 1j * ri) / 2)


def probe_response(model: CircuitModel, const_input, state, in_port, out_port, *,
                   amplitude: float = 1e-4, duration: float = 20.0, dt: float = 1e-3,
                   ) -> tuple[complex, complex]:
    """Small-signal ``(g_minus, g_plus)`` measured by noiseless time-domain probing.

    Starting from ``state``, the circuit is driven for ``duration`` with
    ``const_input`` plus a real, then an imaginary, probe of size
    ``amplitude`` on ``in_port``; the final output shifts relative to an
    unprobed reference run give the two quadrature responses.
    """
    j = model.input_index(in_port) if isinstance(in_port, str) else int(in_port)
    k = model.output_index(out_port) if isinstance(out_port, str) else int(out_port)
    base = np.asarray(const_input, complex)
    names = model.input_labels
    cfg = SimConfig(dt=dt, noise_enabled=False, record_stride=max(1, int(round(duration / dt))))
    finals = []
    for d in (0.0, amplitude, 1j * amplitude):
        u = base.copy()
        u[j] += d
        tr = integrate(model, InputSchedule.constant(names, u, duration), cfg, initial_state=state)
        finals.append(model.outputs(tr.final_state, u)[k])
    y0, yr, yi = finals
    r1, ri = (yr - y0) / amplitude, (yi - y0) / amplitude
    return complex((r1 - 1j * ri) / 2), complex((r1 + 1j * ri) / 2)


# --------------------------------------------------------------------------
# Ensembles
# --------------------------------------------------------------------------

@dataclass
class _Moments:
    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def of(cls, x):
        x = np.asarray(x, float)
        return cls(1, x.copy(), np.zeros_like(x))

    def merge(self, other: "_Moments") -> "_Moments":
        n = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / n)
        m2 = self.m2 + other.m2 + delta**2 * (self.count * other.count / n)
        return _Moments(n, mean, m2)


@dataclass
class EnsembleStats:
    """Per-observable mean, (unbiased) variance and count."""

    mean: dict[str, np.ndarray] = field(default_factory=dict)
    variance: dict[str, np.ndarray] = field(default_factory=dict)
    count: int = 0

    def to_json(self) -> str:
        return json.dumps({
            "count": self.count,
            "observables": {k: {"mean": np.asarray(self.mean[k]).tolist(),
                                "variance": np.asarray(self.variance[k]).tolist(),
                                "count": self.count} for k in self.mean},
        })


def _ensemble_chunk(args):
    model, schedule, config, idx, initial_state, reducer = args
    trajs = integrate_batch(model, schedule, config, idx, initial_state)
    out = None
    for tr in trajs:
        obs = {k: _Moments.of(v) for k, v in reducer(tr).items()}
        out = obs if out is None else {k: out[k].merge(obs[k]) for k in out}
    return out


def run_ensemble(model: CircuitModel, schedule: InputSchedule, config: SimConfig, n_traj: int,
                 reducer: Callable[[Trajectory], Mapping[str, np.ndarray]], *,
                 initial_state=None, workers: int = 1, batch_size: int = 64) -> EnsembleStats:
    """Run ``n_traj`` independent trajectories and reduce them to moments.

    Trajectories are grouped into fixed chunks of ``batch_size`` and the
    chunk results are merged in index order, so the statistics are bitwise
    independent of ``workers``.  ``reducer`` must be picklable when
    ``workers > 1``.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    chunks = [list(range(s, min(s + batch_size, n_traj))) for s in range(0, n_traj, batch_size)]
    jobs = [(model, schedule, config, c, initial_state, reducer) for c in chunks]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_ensemble_chunk, jobs))
    else:
        parts = [_ensemble_chunk(j) for j in jobs]
    acc = parts[0]
    for p in parts[1:]:
        acc = {k: acc[k].merge(p[k]) for k in acc}
    stats = EnsembleStats(count=n_traj)
    for k, mo in acc.items():
        stats.mean[k] = mo.mean
        stats.variance[k] = mo.m2 / (mo.count - 1) if mo.count > 1 else np.zeros_like(mo.m2)
    return stats
