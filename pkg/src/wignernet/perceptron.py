"""Composite circuits of the optical perceptron and its training protocol.

All rates are in units of the NOPO signal/idler line width.  The building
blocks are

* a tunable phase-sensitive amplifier: two matched Kerr cavities inside a
  balanced interferometer, so that the bias and the amplified signal leave
  through different ports;
* a quadrature filter: the same interferometer with critically coupled
  cavities held at dynamic resonance;
* a programmable synapse: an above-threshold NOPO whose signal phase, mixed
  with a constant offset, biases a complementary amplifier pair;
* a thresholder: a prepended Kerr cavity feeding the control port of a
  cross-Kerr Fredkin gate whose signal input carries a constant logic '1'.

Training feedback ``-(y - yhat) f_j`` is produced by two Fredkin gates per
synapse (controlled by the label bus ``Y`` and the estimate bus ``yhat``) and
injected into the NOPO idler, which pulls the signal phase.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .circuit import CircuitModel, Netlist, elaborate
from .components import (Kerr2Params, KerrParams, NopoParams, beamsplitter, detuning_for_gain,
                         fredkin_params, kerr_bias_to_state, kerr_cavity, kerr_cavity_2mode,
                         kerr_max_gain, laser_source, nopo, nopo_fixed_point, nopo_steady_state,
                         nopo_threshold, nport_mixer, phase_shifter, quadrature_filter_coeffs,
                         _kerr_bias, _kerr_linear_response)
from .sde import (InputSchedule, NoConvergence, SimConfig, Trajectory, integrate,
                  integrate_batch,
                  linear_response, steady_state)

__all__ = [
    "AmplifierSpec", "SynapseSpec", "ThresholderSpec", "PerceptronSpec", "ClassificationRun",
    "build_tunable_amplifier", "build_quadrature_filter", "build_fredkin_gate", "build_synapse",
    "build_thresholder", "build_perceptron", "design_synapse", "design_thresholder",
    "design_perceptron", "calibrate_thresholder", "thresholder_response",
    "encode_dataset", "decode_labels", "run_training", "measure_synapse_gain",
    "synapse_gain_table", "perceptron_initial_state", "nopo_phases", "gain_from_phase",
    "analytic_synapse_gain", "update_probe", "segment_intensity", "segment_tail_means",
]

BS = math.pi / 4


def _phase(z) -> float:
    return float(np.angle(z))


def _expose_rest(net: Netlist, prefix_in: str = "vac", prefix_out: str = "dump") -> None:
    """Expose every unbound port under a generated name."""
    bound_in = {d for _, d in net.connections} | set(net.external_inputs.values())
    bound_out = {s for s, _ in net.connections} | set(net.external_outputs.values())
    for inst in sorted(net.instances):
        mdl = net.instances[inst]
        for j in range(mdl.num_ports):
            if (inst, j) not in bound_in:
                net.expose_input(f"{prefix_in}:{inst}.{mdl.input_labels[j]}", (inst, j))
            if (inst, j) not in bound_out:
                net.expose_output(f"{prefix_out}:{inst}.{mdl.output_labels[j]}", (inst, j))


# --------------------------------------------------------------------------
# Tunable amplifier
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AmplifierSpec:
    """Interferometric Kerr amplifier designed for maximal gain ``g_max``.

    ``chi`` is the Kerr coefficient of both arm cavities (taken positive, so
    the physical detuning is negative).  Bias levels refer to the amplitude at
    the amplifier's bias port; each arm sees it divided by sqrt(2).
    ``g_floor`` is the real-quadrature gain at the low bias ``eps0_min``.
    """

    g_max: float = 20.0
    kappa_A: float = 100.0
    chi: float = 1e-3
    g_floor: float = 0.0

    def __post_init__(self):
        if not self.g_max > 1:
            raise ValueError("g_max must exceed 1")
        if self.kappa_A <= 0 or self.chi <= 0:
            raise ValueError("kappa_A and chi must be positive")

    @property
    def Delta(self) -> float:
        """Physical detuning of the arm cavities."""
        return -detuning_for_gain(self.kappa_A, self.g_max)

    @property
    def n_max(self) -> float:
        return kerr_max_gain(self.kappa_A, -self.Delta, self.chi)[1]

    @property
    def cavity(self) -> KerrParams:
        return KerrParams((self.kappa_A,), self.Delta, self.chi)

    def _arm_state(self, eps_port: float) -> complex:
        roots = [r for r in kerr_bias_to_state(self.cavity, eps_port / math.sqrt(2)) if r.stable]
        return min(roots, key=lambda r: abs(r.alpha)).alpha

    @functools.cached_property
    def eps0_max(self) -> float:
        n = self.n_max
        eps_c = _kerr_bias(self.kappa_A, self.kappa_A, self.Delta, self.chi, math.sqrt(n))
        return math.sqrt(2) * abs(eps_c)

    @functools.cached_property
    def trims(self) -> tuple[float, float]:
        """(input, output) signal phase shifts that make the max-gain response real."""
        gm, gp = self.arm_gains(self.eps0_max)
        return (_phase(gp) - _phase(gm)) / 2, -(_phase(gm) + _phase(gp)) / 2

    def arm_gains(self, eps_port: float) -> tuple[complex, complex]:
        a = self._arm_state(eps_port)
        return _kerr_linear_response(self.kappa_A, self.kappa_A, self.Delta, self.chi, a)

    def gains(self, eps_port: float) -> tuple[complex, complex]:
        """Trimmed small-signal ``(G_minus, G_plus)`` at a real positive bias."""
        gm, gp = self.arm_gains(eps_port)
        pi, po = self.trims
        return gm * np.exp(1j * (pi + po)), gp * np.exp(1j * (po - pi))

    def g_rr(self, eps_port: float) -> float:
        gm, gp = self.gains(eps_port)
        return float((gm + gp).real)

    @functools.cached_property
    def eps0_min(self) -> float:
        """Highest bias below ``eps0_max`` where the real-quadrature gain equals ``g_floor``."""
        hi = self.eps0_max
        grid = np.linspace(0.0, hi, 401)
        vals = np.array([self.g_rr(e) for e in grid]) - self.g_floor
        idx = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
        if idx.size == 0:
            raise ValueError("real-quadrature gain never reaches g_floor below the max-gain bias")
        k = idx[-1]
        return float(brentq(lambda e: self.g_rr(e) - self.g_floor, grid[k], grid[k + 1],
                            xtol=1e-13 * hi))

    def scaled_to(self, bias_span: float) -> "AmplifierSpec":
        """Same design with ``chi`` chosen so that eps0_max - eps0_min == bias_span."""
        span = (self.eps0_max - self.eps0_min) * math.sqrt(self.chi)
        return replace(self, chi=(span / bias_span) ** 2)


def _interferometer(arm, trims, bias_model=None) -> Netlist:
    """Balanced interferometer with identical arms; signal on input 1, bias on input 2."""
    phi_in, phi_out = trims
    net = Netlist()
    net.add("trim_in", phase_shifter(phi_in))
    net.add("bs_in", beamsplitter(BS))
    net.add("arm1", arm)
    net.add("arm2", arm)
    net.add("bs_out", beamsplitter(BS))
    net.add("trim_out", phase_shifter(phi_out))
    net.connect("trim_in:0", "bs_in:0")
    net.connect("bs_in:0", "arm1:0")
    net.connect("bs_in:1", "arm2:0")
    net.connect("arm1:0", "bs_out:0")
    net.connect("arm2:0", "bs_out:1")
    net.connect("bs_out:1", "trim_out:0")
    net.expose_input("sig", "trim_in:0")
    net.expose_output("sig", "trim_out:0")
    if bias_model is None:
        net.expose_input("bias", "bs_in:1")
    else:
        net.add("bias_src", bias_model)
        net.connect("bias_src:0", "bs_in:1")
    net.expose_output("bias", "bs_out:0")
    return net


def build_tunable_amplifier(spec: AmplifierSpec) -> CircuitModel:
    """Four-port amplifier: inputs/outputs ``sig`` and ``bias``."""
    net = _interferometer(kerr_cavity(spec.cavity), spec.trims)
    return elaborate(net)


# --------------------------------------------------------------------------
# Quadrature filter
# --------------------------------------------------------------------------

def build_quadrature_filter(kappa: float, chi: float, Delta: float | None = None) -> CircuitModel:
    """Unit gain for the real quadrature, none for the imaginary one.

    Each arm is a two-port cavity (``kappa`` per port) whose second port is a
    loss channel.  The bias is supplied internally at dynamic resonance.
    """
    coeffs, eps0, _ = quadrature_filter_coeffs(kappa, chi, Delta)
    Delta = -math.copysign(kappa / 2, chi) if Delta is None else Delta
    gm, gp = coeffs.g_minus, coeffs.g_plus
    trims = ((_phase(gp) - _phase(gm)) / 2, -(_phase(gm) + _phase(gp)) / 2)
    arm = kerr_cavity(KerrParams((kappa, kappa), Delta, chi))
    net = _interferometer(arm, trims, laser_source(math.sqrt(2) * eps0))
    _expose_rest(net)
    return elaborate(net)


# --------------------------------------------------------------------------
# Fredkin gate
# --------------------------------------------------------------------------

def build_fredkin_gate(params: Kerr2Params) -> CircuitModel:
    """Cross-Kerr controlled switch.

    Inputs ``in1``, ``in2``, ``ctl``; outputs ``out1``, ``out2``, ``ctl``.  With
    the control off the signals cross (``out1 = -i in2``, ``out2 = i in1``);
    with the control at its design level they go straight
    (``out1 = -i in1``, ``out2 = i in2``).
    """
    net = Netlist()
    net.add("bs1", beamsplitter(BS))
    net.add("cav", kerr_cavity_2mode(params))
    net.add("ph", phase_shifter(math.pi / 2))
    net.add("bs2", beamsplitter(BS))
    net.connect("bs1:0", "cav:a1")
    net.connect("bs1:1", "ph:0")
    net.connect("cav:a1", "bs2:0")
    net.connect("ph:0", "bs2:1")
    net.expose_input("in1", "bs1:0")
    net.expose_input("in2", "bs1:1")
    net.expose_input("ctl", "cav:b1")
    net.expose_output("out1", "bs2:0")
    net.expose_output("out2", "bs2:1")
    net.expose_output("ctl", "cav:b1")
    return elaborate(net)


def _gate_params(kappa: float, xi0: float, zeta0: float = 0.0) -> Kerr2Params:
    chi_ab = -kappa * kappa / (4 * xi0 * xi0)
    Da, Db, _ = fredkin_params(kappa, kappa, 0.0, 0.0, chi_ab, zeta0)
    return Kerr2Params((kappa,), (kappa,), Da, Db, 0.0, 0.0, chi_ab)


# --------------------------------------------------------------------------
# Synapse
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynapseSpec:
    amplifier: AmplifierSpec
    nopo: NopoParams
    pump: float
    xi0: float
    gate: Kerr2Params
    alpha: float = 50.0
    out_phase: float = 0.0

    @property
    def nopo_amplitude(self) -> float:
        return nopo_steady_state(self.nopo, self.pump).alpha_s_mag

    @property
    def swing(self) -> float:
        """Amplitude of the real bias modulation ``rho = swing * cos(Phi)``."""
        return 2 / math.sqrt(3) * math.sqrt(self.nopo.kappa) * self.nopo_amplitude

    def bias_levels(self, phi: float) -> tuple[float, float]:
        """Bias amplitudes of the (+, -) amplifiers at NOPO signal phase ``phi``."""
        rho = self.swing * math.cos(phi)
        return (self.xi0 + rho) / math.sqrt(2), (self.xi0 - rho) / math.sqrt(2)


# signal/idler mixing ratio giving equal weights after the idler clean-up
_THETA_SI = math.atan(1 / math.sqrt(2))


def design_synapse(g_max: float = 20.0, kappa_A: float = 100.0, n0: float = 1.0e4,
                   kappa_p: float = 2.0, pump_ratio: float = 2.0, kappa_F: float = 100.0,
                   zeta0: float = 100.0, alpha: float | None = None,
                   g_floor: float = 0.5) -> SynapseSpec:
    """Synapse whose NOPO swing maps exactly onto the amplifier bias range.

    The NOPO nonlinearity is set so that ``n0`` signal photons sit in the
    cavity at pump ``pump_ratio`` times threshold; the amplifier's Kerr
    coefficient is then scaled so that ``(xi0 +/- swing)/sqrt(2)`` hit
    ``eps0_max`` and ``eps0_min``.  A small positive ``g_floor`` trades a few
    percent of peak gain for lower real-to-imaginary leakage.  The routing
    gates switch at the label level ``zeta0``.  The feedback amplitude
    ``alpha`` defaults to ``sqrt(n0)/2`` so the phase step per sample does
    not depend on ``n0``.
    """
    if pump_ratio <= 1:
        raise ValueError("pump must exceed threshold")
    eps_th = math.sqrt(n0 / (4 * (pump_ratio - 1)))
    chi = math.sqrt(kappa_p) / (4 * eps_th)
    nop = NopoParams(1.0, kappa_p, chi)
    pump = -pump_ratio * nopo_threshold(nop)
    swing = 2 / math.sqrt(3) * nopo_steady_state(nop, pump).alpha_s_mag
    amp = AmplifierSpec(g_max, kappa_A, g_floor=g_floor).scaled_to(math.sqrt(2) * swing)
    xi0 = (amp.eps0_max + amp.eps0_min) / math.sqrt(2)
    if alpha is None:
        alpha = 0.5 * math.sqrt(n0)
    spec = SynapseSpec(amp, nop, pump, xi0, _gate_params(kappa_F, zeta0), alpha)
    return replace(spec, out_phase=_minimax_out_phase(spec))


def analytic_synapse_gain(spec: SynapseSpec, phi) -> np.ndarray:
    """Complex real-input gain ``G_rr + i G_ir`` from the amplifier formulas."""
    phi = np.atleast_1d(np.asarray(phi, float))
    out = np.empty(phi.shape, complex)
    for k, p in enumerate(phi):
        bp, bm = spec.bias_levels(p)
        gp = sum(spec.amplifier.gains(bp))
        gm = sum(spec.amplifier.gains(bm))
        out[k] = (gp - gm) / 2 * np.exp(1j * spec.out_phase)
    return out


def _minimax_out_phase(spec: SynapseSpec) -> float:
    """Output phase minimizing the worst real-to-imaginary leakage over Phi."""
    G = analytic_synapse_gain(replace(spec, out_phase=0.0), np.linspace(0, np.pi, 181))
    res = minimize_scalar(lambda d: np.abs((G * np.exp(1j * d)).imag).max(),
                          bounds=(-0.25, 0.25), method="bounded", options={"xatol": 1e-10})
    return float(res.x)


def _synapse_netlist(spec: SynapseSpec) -> Netlist:
    amp = build_tunable_amplifier(spec.amplifier)
    gate = build_fredkin_gate(spec.gate)
    net = Netlist()
    net.add("nopo", nopo(spec.nopo))
    net.add("pump", laser_source(spec.pump))
    net.add("offset", laser_source(spec.xi0))
    net.add("fb_split", beamsplitter(BS))
    net.add("fb_cancel", beamsplitter(BS))
    net.add("mix_si", beamsplitter(_THETA_SI))
    net.add("bs_bias", beamsplitter(BS))
    net.add("bs_split", beamsplitter(BS))
    net.add("amp_p", amp)
    net.add("amp_m", amp)
    net.add("bs_comb", beamsplitter(BS))
    net.add("out_trim", phase_shifter(spec.out_phase))
    net.add("gate_y", gate)
    net.add("gate_e", gate)
    net.connect("pump:0", "nopo:pump")
    # half of the feedback drives the idler, the other half cancels its reflection
    net.connect("gate_e:out1", "fb_split:0")
    net.connect("fb_split:0", "nopo:idler")
    net.connect("fb_split:1", "fb_cancel:1")
    net.connect("nopo:idler", "fb_cancel:0")
    # signal + idler = real bias modulation proportional to cos(Phi)
    net.connect("nopo:signal", "mix_si:0")
    net.connect("fb_cancel:0", "mix_si:1")
    net.connect("offset:0", "bs_bias:0")
    net.connect("mix_si:1", "bs_bias:1")
    net.connect("bs_bias:1", "amp_p:bias")
    net.connect("bs_bias:0", "amp_m:bias")
    net.connect("bs_split:0", "amp_p:sig")
    net.connect("bs_split:1", "amp_m:sig")
    net.connect("amp_p:sig", "bs_comb:0")
    net.connect("amp_m:sig", "bs_comb:1")
    net.connect("bs_comb:0", "out_trim:0")
    # feedback routing: gate_y is switched by the label, gate_e by the estimate
    net.connect("gate_y:out1", "gate_e:in2")
    net.connect("gate_y:out2", "gate_e:in1")
    net.expose_input("x", "bs_split:0")
    net.expose_input("f", "gate_y:in1")
    net.expose_input("Y", "gate_y:ctl")
    net.expose_input("yhat", "gate_e:ctl")
    net.expose_output("out", "out_trim:0")
    net.expose_output("Y", "gate_y:ctl")
    net.expose_output("yhat", "gate_e:ctl")
    _expose_rest(net)
    return net


def build_synapse(spec: SynapseSpec) -> CircuitModel:
    """Programmable-gain synapse.

    Ports: ``x`` -> ``out`` (signal), ``f`` (feedback supply), and the two
    control buses ``Y`` and ``yhat`` which pass through.  The NOPO pump and
    the bias offset are internal sources.
    """
    return elaborate(_synapse_netlist(spec))


def _nopo_modes(model: CircuitModel, prefix: str = "") -> tuple[int, int, int]:
    return tuple(model.mode_index(f"{prefix}nopo.{k}") for k in "sip")


def measure_synapse_gain(model: CircuitModel, spec: SynapseSpec, Phi: float,
                         prefix: str = "") -> tuple[float, float]:
    """``(G_rr, G_ir)`` of a synapse with its NOPO clamped at signal phase ``Phi``.

    The NOPO signal and idler are frozen on the fixed-point manifold; all
    other modes are solved by Newton iteration with the feedback idle, and the
    gains come from the exact small-signal linearization.
    """
    ks, ki, kp = _nopo_modes(model, prefix)
    guess = _synapse_guess(model, spec, Phi, prefix)
    beta = np.zeros(model.num_ports, complex)
    state, _ = steady_state(model, beta, guess, frozen=(ks, ki))
    gm, gp = linear_response(model, beta, state, f"{prefix}x" if prefix else "x",
                             f"{prefix}out" if prefix else "out", frozen=(ks, ki))
    g = gm + gp
    return float(g.real), float(g.imag)


def _synapse_guess(model: CircuitModel, spec: SynapseSpec, Phi: float, prefix: str = "") -> np.ndarray:
    """Initial state: NOPO on its manifold, amplifier arms on their analytic roots."""
    x = np.zeros(model.num_modes, complex)
    ks, ki, kp = _nopo_modes(model, prefix)
    x[[ks, ki, kp]] = nopo_fixed_point(spec.nopo, spec.pump, Phi)
    rho = math.sqrt(spec.nopo.kappa) * (x[ks] + x[ki]) / math.sqrt(3)
    amp = spec.amplifier
    for name, b in (("amp_p", (spec.xi0 + rho) / math.sqrt(2)), ("amp_m", (spec.xi0 - rho) / math.sqrt(2))):
        for arm, sign in (("arm1", -1), ("arm2", 1)):
            roots = [r for r in kerr_bias_to_state(amp.cavity, sign * b / math.sqrt(2)) if r.stable]
            x[model.mode_index(f"{prefix}{name}.{arm}.a")] = min(roots, key=lambda r: abs(r.alpha)).alpha
    return x


@functools.lru_cache(maxsize=8)
def synapse_gain_table(spec: SynapseSpec, n: int = 256) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(Phi, G_rr, G_ir)`` on a uniform grid over one period."""
    model = build_synapse(spec)
    phis = np.linspace(0, 2 * np.pi, n, endpoint=False)
    g = np.array([measure_synapse_gain(model, spec, p) for p in phis])
    for arr in (phis, g):
        arr.setflags(write=False)
    return phis, g[:, 0], g[:, 1]


def gain_from_phase(spec: SynapseSpec, phi) -> np.ndarray:
    """Periodic interpolation of the G_rr(Phi) table."""
    phis, grr, _ = synapse_gain_table(spec)
    p = np.mod(np.asarray(phi, float), 2 * np.pi)
    return np.interp(p, np.append(phis, 2 * np.pi), np.append(grr, grr[0]))


# --------------------------------------------------------------------------
# Thresholder
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholderSpec:
    """Prepended two-port Kerr cavity plus Fredkin gate with a constant '1' input."""

    pre: KerrParams
    gate: Kerr2Params
    zeta0: float
    s0: float = 0.0


def design_thresholder(c_high: float = 300.0, kappa_T: float = 50.0, detune_frac: float = 0.9,
                       kappa_G: float = 100.0, zeta0: float = 100.0) -> ThresholderSpec:
    """Thresholder whose prepended cavity is dynamically resonant at ``c_high``.

    The gate's control design level equals ``c_high``; ``detune_frac`` sets
    the prepended detuning as a fraction of the bistability onset and with it
    the sharpness of the step.  ``s0`` is left at zero; see
    :func:`calibrate_thresholder`.
    """
    if not 0 < detune_frac < 1:
        raise ValueError("detune_frac must lie in (0, 1) to stay monostable")
    D = detune_frac * math.sqrt(3) / 2 * kappa_T
    k2 = kappa_T / 2
    chi = D * k2 / c_high**2
    pre = KerrParams((kappa_T / 2, kappa_T / 2), -D, chi)
    return ThresholderSpec(pre, _gate_params(kappa_G, c_high, zeta0), zeta0)


def build_thresholder(spec: ThresholderSpec) -> CircuitModel:
    """Maps the real inner-product amplitude on ``s`` to the label field ``yhat``.

    Output ``s_tap`` carries ``(s - s0)/sqrt(2)`` (the unused beamsplitter
    port) for diagnostics.
    """
    return elaborate(_thresholder_netlist(spec))


def _thresholder_netlist(spec: ThresholderSpec) -> Netlist:
    net = Netlist()
    net.add("ref", laser_source(spec.s0))
    net.add("bs_c", beamsplitter(BS))
    net.add("pre", kerr_cavity(spec.pre))
    net.add("one", laser_source(spec.zeta0))
    net.add("gate", build_fredkin_gate(spec.gate))
    net.connect("ref:0", "bs_c:1")
    net.connect("bs_c:1", "pre:0")
    net.connect("pre:1", "gate:ctl")
    net.connect("one:0", "gate:in1")
    net.expose_input("s", "bs_c:0")
    net.expose_output("yhat", "gate:out1")
    net.expose_output("s_tap", "bs_c:0")
    _expose_rest(net)
    return net


def thresholder_response(spec: ThresholderSpec, s_values) -> np.ndarray:
    """Noiseless steady-state ``|yhat|^2 / zeta0^2`` along an increasing sweep of ``s``.

    Each point is continued from the previous root, following the branch the
    circuit reaches when ``s`` is raised slowly.
    """
    model = build_thresholder(spec)
    js = model.input_index("s")
    ky = model.output_index("yhat")
    out = []
    state = None
    for s in np.asarray(s_values, float):
        beta = np.zeros(model.num_ports, complex)
        beta[js] = s
        state = _thresholder_state(model, spec, beta, state)
        y = model.outputs(state, beta)[ky]
        out.append(abs(y) ** 2 / spec.zeta0**2)
    return np.array(out)


def _thresholder_state(model, spec, beta, guess):
    if guess is None:
        guess = np.zeros(model.num_modes, complex)
        ka = model.mode_index("gate.cav.a")
        guess[ka] = -math.sqrt(spec.gate.kappas_a[0]) * spec.zeta0 / math.sqrt(2) / (spec.gate.kappas_a[0] / 2)
    try:
        return steady_state(model, beta, guess)[0]
    except NoConvergence:
        # fall back on relaxing the dynamics from the guess
        sch = InputSchedule.constant(model.input_labels, beta, 2.0)
        tr = integrate(model, sch, SimConfig(dt=1e-4, noise_enabled=False, record_stride=20000),
                       initial_state=guess)
        return steady_state(model, beta, tr.final_state)[0]


def calibrate_thresholder(spec: ThresholderSpec, n: int = 801) -> ThresholderSpec:
    """Choose ``s0`` so the 0.5 crossing of the output intensity sits at ``s = 0``.

    With ``s0 = 0`` the control is ``c = s / sqrt(2)``, so the crossing
    ``c*`` located on that sweep gives ``s0 = sqrt(2) c*``.
    """
    base = replace(spec, s0=0.0)
    xi0 = math.sqrt(spec.gate.kappas_a[0] * spec.gate.kappas_b[0]) / (2 * math.sqrt(abs(spec.gate.chi_ab)))
    s = np.linspace(0.0, 2.0 * math.sqrt(2) * xi0, n)
    I = thresholder_response(base, s)
    idx = np.nonzero((I[:-1] < 0.5) & (I[1:] >= 0.5))[0]
    if idx.size != 1:
        raise ValueError(f"thresholder response crosses 0.5 {idx.size} times on the calibration sweep")
    k = idx[0]
    f = lambda x: thresholder_response(base, [s[k], x])[-1] - 0.5
    s_star = brentq(f, s[k], s[k + 1], xtol=1e-10)
    return replace(spec, s0=float(s_star))


# --------------------------------------------------------------------------
# Perceptron
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PerceptronSpec:
    N: int
    synapse: SynapseSpec
    qfilter: KerrParams
    thresholder: ThresholderSpec
    dt_sample: float = 2.0
    signal_fraction: float = 0.05
    x_ref: float | None = None
    phi_init: float = math.pi / 2
    zeta_Y: float | None = None

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.thresholder.zeta0 <= 0:
            raise ValueError("zeta0 must be positive")
        if self.dt_sample <= 0:
            raise ValueError("dt_sample must be positive")

    @property
    def label_amplitude(self) -> float:
        return self.thresholder.zeta0 if self.zeta_Y is None else self.zeta_Y

    @property
    def x_amplitude(self) -> float:
        """Optical amplitude of an input equal to ``x_ref``."""
        return self.signal_fraction * self.synapse.amplifier.eps0_max

    def to_dict(self) -> dict:
        return _spec_to_dict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PerceptronSpec":
        return _spec_from_dict(doc)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def design_perceptron(N: int, *, qf_kappa: float = 50.0, qf_bias: float | None = None,
                      thresholder: ThresholderSpec | None = None, synapse: SynapseSpec | None = None,
                      **kw) -> PerceptronSpec:
    """Default, calibrated perceptron for input dimension ``N``.

    The filter bias defaults to 20x the largest expected inner-product
    amplitude; the thresholder is designed around ``c_high`` just above the
    largest control level and calibrated.
    """
    syn = synapse or design_synapse()
    g = syn.amplifier.g_max
    frac = kw.get("signal_fraction", 0.05)
    s_max = g / 2 * frac * syn.amplifier.eps0_max * math.sqrt(N)
    b = qf_bias or 20 * s_max
    # dynamic resonance: |eps0| = sqrt(kappa) alpha0, alpha0^2 = kappa / (2 chi)
    chi_qf = qf_kappa**2 / (2 * b**2)
    qf = KerrParams((qf_kappa, qf_kappa), -qf_kappa / 2, chi_qf)
    thr = thresholder or calibrate_thresholder(design_thresholder(c_high=_default_c_high(s_max)))
    return PerceptronSpec(N, syn, qf, thr, **kw)


def _default_c_high(s_max: float) -> float:
    # keep c = (s + s0)/sqrt(2) positive over the whole signal range
    return max(300.0, 1.2 * s_max)


def _synapse_name(j: int) -> str:
    return f"syn{j + 1}"


def _perceptron_netlist(spec: PerceptronSpec) -> Netlist:
    syn = build_synapse(spec.synapse)
    net = Netlist()
    N = spec.N
    for j in range(N):
        net.add(_synapse_name(j), syn)
    q = spec.qfilter
    net.add("qf", build_quadrature_filter(q.kappas[0], q.chi, q.Delta))
    net.add("thr", build_thresholder(spec.thresholder))
    if N > 1:
        net.add("mix", nport_mixer(N))
        for j in range(N):
            net.connect(f"{_synapse_name(j)}:out", ("mix", j))
        net.connect("mix:0", "qf:sig")
    else:
        net.connect("syn1:out", "qf:sig")
    net.connect("qf:sig", "thr:s")
    # label buses traverse the synapses in order
    net.connect("thr:yhat", "syn1:yhat")
    for j in range(N - 1):
        net.connect(f"{_synapse_name(j)}:Y", f"{_synapse_name(j + 1)}:Y")
        net.connect(f"{_synapse_name(j)}:yhat", f"{_synapse_name(j + 1)}:yhat")
    for j in range(N):
        net.expose_input(f"x{j + 1}", f"{_synapse_name(j)}:x")
    for j in range(N):
        net.expose_input(f"f{j + 1}", f"{_synapse_name(j)}:f")
    net.expose_input("Y", "syn1:Y")
    net.expose_output("yhat", f"{_synapse_name(N - 1)}:yhat")
    net.expose_output("Y", f"{_synapse_name(N - 1)}:Y")
    net.expose_output("s_tap", "thr:s_tap")
    _expose_rest(net)
    return net


@functools.lru_cache(maxsize=8)
def build_perceptron(spec: PerceptronSpec) -> CircuitModel:
    """Flat perceptron model.

    Inputs ``x1..xN`` (data), ``f1..fN`` (feedback supply, zero outside
    training), ``Y`` (true label); outputs ``yhat`` (estimate, after the
    feedback bus), ``Y`` and ``s_tap``.  Every other port is a vacuum input
    or a discarded output.
    """
    return elaborate(_perceptron_netlist(spec))


def nopo_phases(model: CircuitModel, states: np.ndarray, N: int) -> np.ndarray:
    """Signal phases of the synapse NOPOs from recorded states (``(..., N)``)."""
    labels = list(model.mode_labels) if states.shape[-1] == model.num_modes else None
    cols = []
    for j in range(N):
        lab = f"{_synapse_name(j)}.nopo.s"
        cols.append(model.mode_index(lab) if labels else j)
    return np.angle(states[..., cols])


def perceptron_initial_state(spec: PerceptronSpec, phis=None) -> np.ndarray:
    """Noiseless steady state with all inputs idle and NOPO phases ``phis``."""
    phis = np.full(spec.N, spec.phi_init) if phis is None else np.broadcast_to(phis, (spec.N,))
    return _perceptron_state_cached(spec, tuple(float(p) for p in phis)).copy()


@functools.lru_cache(maxsize=32)
def _perceptron_state_cached(spec: PerceptronSpec, phis: tuple) -> np.ndarray:
    model = build_perceptron(spec)
    x = np.zeros(model.num_modes, complex)
    frozen = []
    syn = spec.synapse
    sub = build_synapse(syn)
    for j, phi in enumerate(phis):
        g = _synapse_guess(sub, syn, phi)
        pre = f"{_synapse_name(j)}."
        for k, lab in enumerate(sub.mode_labels):
            x[model.mode_index(pre + lab)] = g[k]
        frozen += [model.mode_index(pre + "nopo.s"), model.mode_index(pre + "nopo.i")]
    # filter arms sit at dynamic resonance, thresholder starts from its off state
    q = spec.qfilter
    _, eps0, a0 = quadrature_filter_coeffs(q.kappas[0], q.chi, q.Delta)
    x[model.mode_index("qf.arm1.a")] = -a0
    x[model.mode_index("qf.arm2.a")] = a0
    thr = spec.thresholder
    ka = thr.gate.kappas_a[0]
    x[model.mode_index("thr.gate.cav.a")] = -thr.zeta0 / math.sqrt(2) * 2 / math.sqrt(ka)
    beta = np.zeros(model.num_ports, complex)
    state, _ = steady_state(model, beta, x, frozen=frozen)
    state.setflags(write=False)
    return state


# --------------------------------------------------------------------------
# Data encoding and decoding
# --------------------------------------------------------------------------

def encode_dataset(X, y, spec: PerceptronSpec, n_train: int | None = None,
                   port_names=None) -> InputSchedule:
    """One segment of length ``dt_sample`` per sample.

    ``x_j`` drives input ``j`` in the real quadrature; during the first
    ``n_train`` samples (all of them by default) the feedback supply carries
    ``alpha * x_j / x_ref`` and ``Y`` carries the label; afterwards both are
    dark.
    """
    X = np.asarray(X, float).reshape(-1, spec.N) if np.size(X) else np.zeros((0, spec.N))
    y = np.asarray(y, int).reshape(-1)
    M = X.shape[0]
    if y.size != M:
        raise ValueError("X and y lengths differ")
    names = tuple(port_names) if port_names is not None else build_perceptron(spec).input_labels
    n_train = M if n_train is None else int(n_train)
    x_ref = spec.x_ref or (float(np.abs(X).max()) if M else 1.0) or 1.0
    xn = X / x_ref
    amps = np.zeros((M, len(names)), complex)
    idx = {nm: k for k, nm in enumerate(names)}
    T = (np.arange(M) < n_train).astype(float)
    for j in range(spec.N):
        amps[:, idx[f"x{j + 1}"]] = spec.x_amplitude * xn[:, j]
        amps[:, idx[f"f{j + 1}"]] = T * spec.synapse.alpha * xn[:, j]
    amps[:, idx["Y"]] = T * spec.label_amplitude * y
    times = np.arange(M + 1) * spec.dt_sample
    return InputSchedule(names, times, amps)


def decode_labels(traj: Trajectory, spec: PerceptronSpec, n_segments: int | None = None,
                  output: str = "yhat", window: float = 0.5) -> np.ndarray:
    """Per-segment label from ``|<yhat>|^2 / zeta0^2``, rounded.

    The field (noise-free output channel on the noisy state) is averaged
    over the last ``window`` fraction of each segment, after the thresholder
    has settled; squaring after averaging keeps vacuum fluctuations from
    biasing the intensity upward.
    """
    if not 0 < window <= 1:
        raise ValueError("window must lie in (0, 1]")
    return (segment_intensity(traj, spec, n_segments, output, window) >= 0.5).astype(int)


def segment_intensity(traj: Trajectory, spec: PerceptronSpec, n_segments: int | None = None,
                      output: str = "yhat", window: float = 0.5) -> np.ndarray:
    field_ = segment_tail_means(traj.times, traj.output(output, mean=True), spec.dt_sample,
                                n_segments, window)
    return np.abs(field_) ** 2 / spec.thresholder.zeta0**2


def segment_tail_means(t, v, dt_s: float, n_segments: int | None = None,
                       window: float = 0.5) -> np.ndarray:
    """Mean of ``v`` over the last ``window`` fraction of each segment of length ``dt_s``."""
    t = np.asarray(t, float)
    v = np.asarray(v)
    n = int(round(t[-1] / dt_s)) if n_segments is None else n_segments
    pos = t / dt_s
    seg = np.minimum(np.ceil(pos - 1e-9).astype(int) - 1, n - 1)
    frac = pos - seg
    sel = (seg >= 0) & (frac >= 1 - window - 1e-9)
    cnt = np.bincount(seg[sel], minlength=n)[:n]
    tot = np.bincount(seg[sel], weights=v[sel].real, minlength=n)[:n].astype(v.dtype)
    if np.iscomplexobj(v):
        tot += 1j * np.bincount(seg[sel], weights=v[sel].imag, minlength=n)[:n]
    out = np.zeros(n, v.dtype)
    np.divide(tot, cnt, out=out, where=cnt > 0)
    return out


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

@dataclass
class ClassificationRun:
    times: np.ndarray
    gains: np.ndarray
    phases: np.ndarray
    labels_true: np.ndarray
    labels_pred: np.ndarray
    n_train: int
    n_test: int
    N_fb: float
    intensities: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def errors(self) -> np.ndarray:
        return (self.labels_true != self.labels_pred).astype(int)

    @property
    def train_error_rate(self) -> float:
        return float(self.errors[:self.n_train].mean()) if self.n_train else float("nan")

    @property
    def test_error_rate(self) -> float:
        return float(self.errors[self.n_train:].mean()) if self.n_test else float("nan")


def run_training(spec: PerceptronSpec, dataset, config: SimConfig) -> ClassificationRun:
    """Train on the first part of ``dataset`` and test on the rest, in one run.

    ``dataset`` is ``(X_train, y_train, X_test, y_test)``.  Gains are read off
    the recorded NOPO phases through the G_rr(Phi) table.
    """
    Xtr, ytr, Xte, yte = dataset
    X = np.vstack([np.asarray(Xtr, float).reshape(-1, spec.N), np.asarray(Xte, float).reshape(-1, spec.N)])
    y = np.concatenate([np.asarray(ytr, int).ravel(), np.asarray(yte, int).ravel()])
    n_train = len(np.asarray(ytr).ravel())
    model = build_perceptron(spec)
    sched = encode_dataset(X, y, spec, n_train, model.input_labels)
    rec_modes = tuple(f"{_synapse_name(j)}.nopo.s" for j in range(spec.N))
    cfg = replace(config, t_end=None, recorded_outputs=("yhat", "s_tap"), recorded_modes=rec_modes)
    x0 = perceptron_initial_state(spec)
    traj = integrate(model, sched, cfg, initial_state=x0)
    pred = decode_labels(traj, spec, len(y))
    phases = np.angle(traj.states)
    gains = gain_from_phase(spec.synapse, phases)
    I = segment_intensity(traj, spec, len(y))
    return ClassificationRun(times=traj.times, gains=gains, phases=phases, labels_true=y,
                             labels_pred=pred, n_train=n_train, n_test=len(y) - n_train,
                             N_fb=spec.synapse.alpha**2 * spec.dt_sample, intensities=I)


def update_probe(spec: PerceptronSpec, x, y: int, phis, *, feedback: bool = True,
                 noise: bool = False, n_traj: int = 1, seed: int = 0,
                 dt: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Gain change caused by one training segment.

    The sample ``x`` is first presented for one ``dt_sample`` with training
    off so the thresholder settles on its estimate; then one training segment
    with label ``y`` follows (feedback supply dark if ``feedback`` is false).
    Returns ``(dG, yhat)``: the per-synapse change of G_rr over the training
    segment, shape ``(n_traj, N)``, and the decoded estimate per trajectory.
    """
    model = build_perceptron(spec)
    x = np.asarray(x, float).reshape(1, spec.N)
    sched = encode_dataset(np.vstack([x, x]), [y, y], spec, 2, model.input_labels)
    amps = sched.amplitudes.copy()
    for j in range(spec.N):
        amps[0, model.input_index(f"f{j + 1}")] = 0
        if not feedback:
            amps[1, model.input_index(f"f{j + 1}")] = 0
    amps[0, model.input_index("Y")] = 0
    sched = InputSchedule(sched.port_names, sched.times, amps)
    stride = max(1, int(round(spec.dt_sample / dt)))
    cfg = SimConfig(dt=dt, seed=seed, noise_enabled=noise, record_stride=stride,
                    recorded_outputs=("yhat",),
                    recorded_modes=tuple(f"{_synapse_name(j)}.nopo.s" for j in range(spec.N)))
    x0 = perceptron_initial_state(spec, phis)
    dG, yhat = [], []
    for tr in integrate_batch(model, sched, cfg, range(n_traj), np.tile(x0, (n_traj, 1))):
        G = gain_from_phase(spec.synapse, np.angle(tr.states))
        dG.append(G[-1] - G[-2])
        yhat.append(int(decode_labels(tr, spec, 2)[1]))
    return np.array(dG), np.array(yhat)


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------

def _spec_to_dict(spec: PerceptronSpec) -> dict:
    d = asdict(spec)
    d["version"] = 1
    return d


def _spec_from_dict(doc: dict) -> PerceptronSpec:
    doc = dict(doc)
    doc.pop("version", None)
    syn = dict(doc.pop("synapse"))
    amp = AmplifierSpec(**syn.pop("amplifier"))
    nop = NopoParams(**syn.pop("nopo"))
    gate = Kerr2Params(**syn.pop("gate"))
    synapse = SynapseSpec(amp, nop, gate=gate, **syn)
    thr = dict(doc.pop("thresholder"))
    thresholder = ThresholderSpec(KerrParams(**thr.pop("pre")), Kerr2Params(**thr.pop("gate")), **thr)
    qf = KerrParams(**doc.pop("qfilter"))
    return PerceptronSpec(synapse=synapse, qfilter=qf, thresholder=thresholder, **doc)
