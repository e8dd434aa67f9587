"""Primitive component models and their closed-form steady-state analytics.

Static elements (laser source, phase shifter, beamsplitter, N-port mixer)
have no internal modes.  Resonators use the convention

    A = -kappa_T/2 - i Delta,   B = -(sqrt(kappa_1), ..., sqrt(kappa_n)),   C = -B^T

so a Kerr mode sees the effective detuning ``Delta + chi |alpha|^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .circuit import CircuitModel, Netlist, NetlistError, Nonlinearity

__all__ = [
    "ComponentError", "DegenerateDenominator", "InvalidRegime", "UnstableParameters",
    "BelowThreshold",
    "KerrParams", "Kerr2Params", "NopoParams", "GainCoefficients", "SteadyRoot",
    "laser_source", "phase_shifter", "beamsplitter", "nport_mixer",
    "kerr_cavity", "kerr_cavity_2mode", "nopo",
    "kerr_reflection_coeffs", "kerr_bias_to_state", "kerr_max_gain", "detuning_for_gain",
    "quadrature_filter_coeffs", "fredkin_params",
    "nopo_threshold", "nopo_steady_state", "nopo_fixed_point", "nopo_phase_diffusion_rate",
    "COMPONENT_KINDS", "make_component", "netlist_from_json",
]


class ComponentError(ValueError):
    pass


class DegenerateDenominator(ComponentError):
    """Linearized response is singular (operating exactly at a bistability edge)."""


class InvalidRegime(ComponentError):
    """Parameters lie outside the formula's domain of validity."""


class UnstableParameters(ComponentError):
    """A stability inequality of the switch design is violated."""


class BelowThreshold(ComponentError):
    """Above-threshold NOPO quantity requested for a sub-threshold pump."""


# --------------------------------------------------------------------------
# Parameter records
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class KerrParams:
    kappas: tuple[float, ...]
    Delta: float
    chi: float

    def __post_init__(self):
        ks = tuple(float(k) for k in np.atleast_1d(self.kappas))
        if any(k < 0 for k in ks) or not any(k > 0 for k in ks):
            raise ComponentError("couplings must be >= 0 with at least one > 0")
        object.__setattr__(self, "kappas", ks)

    @property
    def kappa_total(self) -> float:
        return float(sum(self.kappas))


@dataclass(frozen=True)
class Kerr2Params:
    kappas_a: tuple[float, ...]
    kappas_b: tuple[float, ...]
    Delta_a: float
    Delta_b: float
    chi_a: float
    chi_b: float
    chi_ab: float

    def __post_init__(self):
        ka = tuple(float(k) for k in np.atleast_1d(self.kappas_a))
        kb = tuple(float(k) for k in np.atleast_1d(self.kappas_b))
        if any(k < 0 for k in ka + kb) or sum(ka) <= 0 or sum(kb) <= 0:
            raise ComponentError("two-mode Kerr needs non-negative couplings and positive widths")
        object.__setattr__(self, "kappas_a", ka)
        object.__setattr__(self, "kappas_b", kb)


@dataclass(frozen=True)
class NopoParams:
    kappa: float
    kappa_p: float
    chi: float

    def __post_init__(self):
        if min(self.kappa, self.kappa_p, self.chi) <= 0:
            raise ComponentError("NOPO rates and chi must be positive")


@dataclass(frozen=True)
class GainCoefficients:
    """Small-signal reflection ``out = g_minus*d + g_plus*conj(d)`` about a bias.

    The quadrature gains are indexed (output, input): a real input ``x``
    leaves as ``(g_rr + i g_ir) x``, an imaginary input ``i x`` as
    ``(g_ri + i g_ii) x``.
    """

    eta: complex
    g_minus: complex
    g_plus: complex
    eps0: complex = 0j
    alpha0: complex = 0j

    @property
    def g_rr(self) -> float:
        return float((self.g_minus + self.g_plus).real)

    @property
    def g_ir(self) -> float:
        return float((self.g_minus + self.g_plus).imag)

    @property
    def g_ri(self) -> float:
        return float((self.g_plus - self.g_minus).imag)

    @property
    def g_ii(self) -> float:
        return float((self.g_minus - self.g_plus).real)

    @property
    def envelope(self) -> float:
        """Largest gain between any two signal quadratures."""
        return abs(self.g_minus) + abs(self.g_plus)

    def quadrature_matrix(self) -> np.ndarray:
        return np.array([[self.g_rr, self.g_ri], [self.g_ir, self.g_ii]])


class SteadyRoot(NamedTuple):
    alpha: complex
    stable: bool


# --------------------------------------------------------------------------
# Static components
# --------------------------------------------------------------------------

def _static(D, c=None, labels=None) -> CircuitModel:
    D = np.atleast_2d(np.asarray(D, complex))
    n = D.shape[0]
    return CircuitModel(
        A=np.zeros((0, 0)), B=np.zeros((0, n)), C=np.zeros((n, 0)), D=D,
        a=np.zeros(0), c=np.zeros(n) if c is None else c,
        input_labels=labels or (), output_labels=labels or (),
    )


def laser_source(eta: complex) -> CircuitModel:
    """Coherent displacement ``beta_out = eta + beta_in``."""
    return _static([[1.0]], [eta], ("out",))


def phase_shifter(phi: float) -> CircuitModel:
    return _static([[np.exp(1j * phi)]], labels=("io",))


def beamsplitter(theta: float) -> CircuitModel:
    c, s = math.cos(theta), math.sin(theta)
    return _static([[c, -s], [s, c]], labels=("1", "2"))


def nport_mixer(N: int) -> CircuitModel:
    """Unitary N-port whose first output is the uniform sum / sqrt(N).

    The basis is completed by the Householder reflection that maps ``e_1``
    onto the uniform vector.
    """
    if N < 2:
        raise ComponentError("mixer needs N >= 2")
    u = np.full(N, 1.0 / math.sqrt(N))
    v = u.copy()
    v[0] -= 1.0
    H = np.eye(N) - 2.0 * np.outer(v, v) / (v @ v)
    return _static(H, labels=tuple(str(j + 1) for j in range(N)))


# --------------------------------------------------------------------------
# Resonators
# --------------------------------------------------------------------------

def kerr_cavity(params: KerrParams) -> CircuitModel:
    ks = np.array(params.kappas)
    n = ks.size
    B = -np.sqrt(ks)[None, :]
    return CircuitModel(
        A=[[-params.kappa_total / 2 - 1j * params.Delta]], B=B, C=-B.T, D=np.eye(n),
        a=np.zeros(1), c=np.zeros(n),
        nonlinearities=(Nonlinearity("kerr1", (0,), (params.chi,)),) if params.chi else (),
        input_labels=tuple(str(j + 1) for j in range(n)), mode_labels=("a",),
    )


def kerr_cavity_2mode(params: Kerr2Params) -> CircuitModel:
    """Two-mode self/cross-Kerr cavity; ports of mode a come first."""
    ka, kb = np.array(params.kappas_a), np.array(params.kappas_b)
    na, nb = ka.size, kb.size
    B = np.zeros((2, na + nb))
    B[0, :na] = -np.sqrt(ka)
    B[1, na:] = -np.sqrt(kb)
    A = np.diag([-ka.sum() / 2 - 1j * params.Delta_a, -kb.sum() / 2 - 1j * params.Delta_b])
    labels = tuple(f"a{j + 1}" for j in range(na)) + tuple(f"b{j + 1}" for j in range(nb))
    return CircuitModel(
        A=A, B=B, C=-B.T, D=np.eye(na + nb), a=np.zeros(2), c=np.zeros(na + nb),
        nonlinearities=(Nonlinearity("kerr2", (0, 1), (params.chi_a, params.chi_b, params.chi_ab)),),
        input_labels=labels, mode_labels=("a", "b"),
    )


def nopo(params: NopoParams) -> CircuitModel:
    """Triply resonant NOPO; modes and ports ordered (signal, idler, pump)."""
    sk, sp = math.sqrt(params.kappa), math.sqrt(params.kappa_p)
    B = -np.diag([sk, sk, sp])
    return CircuitModel(
        A=np.diag([-params.kappa / 2, -params.kappa / 2, -params.kappa_p / 2]),
        B=B, C=-B.T, D=np.eye(3), a=np.zeros(3), c=np.zeros(3),
        nonlinearities=(Nonlinearity("nopo", (0, 1, 2), (params.chi,)),),
        input_labels=("signal", "idler", "pump"), mode_labels=("s", "i", "p"),
    )


# --------------------------------------------------------------------------
# Single-mode Kerr analytics
# --------------------------------------------------------------------------

def _kerr_linear_response(kappa_in, kappa_total, Delta, chi, alpha0) -> tuple[complex, complex]:
    n = abs(alpha0) ** 2
    den = (kappa_total / 2) ** 2 + (Delta + 2 * chi * n) ** 2 - chi**2 * n**2
    if abs(den) < 1e-300:
        raise DegenerateDenominator("linearized cavity response is singular")
    g_minus = 1 + kappa_in * (-kappa_total / 2 + 1j * (Delta + 2 * chi * n)) / den
    g_plus = 1j * kappa_in * chi * alpha0**2 / den
    return complex(g_minus), complex(g_plus)


def _kerr_bias(kappa_in, kappa_total, Delta, chi, alpha0) -> complex:
    # From 0 = A alpha0 + A_NL(alpha0) + B eps0 with the drive on one port.
    n = abs(alpha0) ** 2
    return complex(-(kappa_total / 2 + 1j * (Delta + chi * n)) * alpha0 / math.sqrt(kappa_in))


def kerr_reflection_coeffs(params: KerrParams, alpha0: complex) -> GainCoefficients:
    """Bias reflection ``eta`` and small-signal gains of a lossless one-port Kerr cavity."""
    if len(params.kappas) != 1:
        raise ComponentError("kerr_reflection_coeffs expects a single lossless port")
    k = params.kappas[0]
    g_minus, g_plus = _kerr_linear_response(k, k, params.Delta, params.chi, alpha0)
    D_eff = params.Delta + params.chi * abs(alpha0) ** 2
    eta = -(k / 2 - 1j * D_eff) / (k / 2 + 1j * D_eff)
    return GainCoefficients(eta, g_minus, g_plus, _kerr_bias(k, k, params.Delta, params.chi, alpha0),
                            complex(alpha0))


def _real_cubic_roots(c3, c2, c1, c0) -> list[float]:
    """Real roots of ``c3 x^3 + c2 x^2 + c1 x + c0`` (closed form, with multiplicity)."""
    if c3 == 0:
        if c2 == 0:
            return [-c0 / c1] if c1 else []
        disc = c1 * c1 - 4 * c2 * c0
        if disc < 0:
            return []
        sq = math.sqrt(disc)
        return sorted([(-c1 - sq) / (2 * c2), (-c1 + sq) / (2 * c2)])
    b, c, d = c2 / c3, c1 / c3, c0 / c3
    p = c - b * b / 3
    q = 2 * b**3 / 27 - b * c / 3 + d
    shift = -b / 3
    disc = (q / 2) ** 2 + (p / 3) ** 3
    scale = max(abs(p) ** 1.5, abs(q), 1e-300)
    if disc > 1e-14 * scale**2:
        sq = math.sqrt(disc)
        return [math.copysign(abs(-q / 2 + sq) ** (1 / 3), -q / 2 + sq)
                + math.copysign(abs(-q / 2 - sq) ** (1 / 3), -q / 2 - sq) + shift]
    if p == 0:
        return [shift] * 3
    r = 2 * math.sqrt(-p / 3)
    arg = max(-1.0, min(1.0, 3 * q / (p * r)))
    phi = math.acos(arg) / 3
    return sorted(r * math.cos(phi - 2 * math.pi * j / 3) + shift for j in range(3))


def _polish_intensity(u, kin, kt, Delta, chi, e2):
    # One or two Newton steps on the cubic remove cancellation error from the closed form.
    for _ in range(3):
        f = ((kt / 2) ** 2 + (Delta + chi * u) ** 2) * u - kin * e2
        fp = (kt / 2) ** 2 + (Delta + chi * u) ** 2 + 2 * chi * (Delta + chi * u) * u
        if fp == 0:
            break
        step = f / fp
        u -= step
        if abs(step) <= 1e-16 * max(abs(u), 1.0):
            break
    return u


def kerr_bias_to_state(params: KerrParams, eps0: complex, port: int = 0) -> list[SteadyRoot]:
    """All steady states of a Kerr cavity driven with ``eps0`` on ``port``.

    Solves the cubic in ``u = |alpha0|^2`` in closed form and recovers the
    phase; every root carries a linear-stability flag.
    """
    kt, kin = params.kappa_total, params.kappas[port]
    Delta, chi = params.Delta, params.chi
    e2 = abs(eps0) ** 2
    if e2 == 0:
        return [SteadyRoot(0j, True)]
    us = _real_cubic_roots(chi**2, 2 * Delta * chi, (kt / 2) ** 2 + Delta**2, -kin * e2)
    roots = []
    for u in us:
        u = _polish_intensity(u, kin, kt, Delta, chi, e2)
        if u < 0:
            continue
        alpha = -math.sqrt(kin) * eps0 / (kt / 2 + 1j * (Delta + chi * u))
        roots.append(SteadyRoot(complex(alpha), _kerr_stable(kt, Delta, chi, alpha)))
    return roots


def _kerr_stable(kt, Delta, chi, alpha) -> bool:
    n = abs(alpha) ** 2
    P = -kt / 2 - 1j * (Delta + 2 * chi * n)
    Q = -1j * chi * alpha**2
    J = np.array([[(P + Q).real, -(P - Q).imag], [(P + Q).imag, (P - Q).real]])
    return bool(np.linalg.eigvals(J).real.max() < 0)


def _gain_f(kappa, Delta):
    return 28 * Delta**2 + 4 * kappa**2 - 8 * Delta * math.sqrt(12 * Delta**2 + 3 * kappa**2)


def kerr_max_gain(kappa: float, Delta: float, chi: float) -> tuple[float, float]:
    """Largest small-signal gain of a lossless Kerr amplifier and its photon number.

    ``Delta`` is counted positive on the amplifying side, i.e. the cavity's
    physical detuning is ``-sign(chi) * Delta``.  Returns ``(g_max, n_max)``.
    """
    f = _gain_f(kappa, Delta)
    if f <= kappa**2:
        raise InvalidRegime(f"no finite maximal gain for Delta={Delta}, kappa={kappa}")
    sf = math.sqrt(f)
    g = math.sqrt((sf + kappa) / (sf - kappa))
    n = math.sqrt((Delta**2 + kappa**2 / 4) / (3 * chi**2))
    return g, n


def detuning_for_gain(kappa: float, g_max: float) -> float:
    """Inverse of ``kerr_max_gain``: detuning (amplifying side) for a target gain."""
    if g_max <= 1:
        raise InvalidRegime("target gain must exceed 1")
    s3 = math.sqrt(3.0)
    return s3 * kappa / 2 * (g_max - s3) * (g_max - 1 / s3) / (g_max**2 - 1)


def quadrature_filter_coeffs(kappa: float, chi: float, Delta: float | None = None):
    """Gains of a critically coupled Kerr cavity held at dynamic resonance.

    Both ports couple at ``kappa``.  ``Delta`` defaults to ``-sign(chi)*kappa/2``
    which yields unit gain ``|g_-| + |g_+| = 2|Delta|/kappa`` for the
    transmitted quadrature.  Returns ``(GainCoefficients, eps0, alpha0)``
    with ``alpha0`` chosen real.
    """
    if chi == 0:
        raise ComponentError("quadrature filter needs a Kerr nonlinearity")
    if Delta is None:
        Delta = -math.copysign(kappa / 2, chi)
    if Delta / chi >= 0:
        raise InvalidRegime("dynamic resonance requires Delta/chi < 0")
    alpha0 = complex(math.sqrt(-Delta / chi))
    g_minus, g_plus = _kerr_linear_response(kappa, 2 * kappa, Delta, chi, alpha0)
    eps0 = _kerr_bias(kappa, 2 * kappa, Delta, chi, alpha0)
    D_eff = Delta + chi * abs(alpha0) ** 2
    eta = 1 - kappa / (kappa + 1j * D_eff)
    return GainCoefficients(complex(eta), g_minus, g_plus, eps0, alpha0), eps0, alpha0


# --------------------------------------------------------------------------
# Two-mode Kerr: controlled phase shifter parameters
# --------------------------------------------------------------------------

def fredkin_params(kappa_a, kappa_b, chi_a, chi_b, chi_ab, zeta0) -> tuple[float, float, float]:
    """Detunings and control level that make the signal reflection flip sign.

    Returns ``(Delta_a, Delta_b, xi0)``.  The sign flip itself needs
    ``chi_ab < 0`` in this detuning convention; the formulas are evaluated
    for any sign.
    """
    if min(kappa_a, kappa_b) <= 0 or chi_ab == 0:
        raise ComponentError("fredkin_params needs positive couplings and chi_ab != 0")
    z2 = abs(zeta0) ** 2
    Delta_a = kappa_a / 2 - 2 * chi_a * z2 / kappa_a
    Delta_b = kappa_a * chi_b / chi_ab - 2 * chi_ab * z2 / kappa_a
    xi0 = math.sqrt(kappa_a * kappa_b) / (2 * math.sqrt(abs(chi_ab)))
    lim = math.sqrt(3) / 2
    if Delta_a > lim * kappa_a + 1e-12:
        raise UnstableParameters(f"Delta_a={Delta_a:.6g} exceeds sqrt(3)*kappa_a/2")
    if Delta_b > lim * kappa_b + 1e-12:
        raise UnstableParameters(f"Delta_b={Delta_b:.6g} exceeds sqrt(3)*kappa_b/2")
    return Delta_a, Delta_b, xi0


# --------------------------------------------------------------------------
# NOPO analytics
# --------------------------------------------------------------------------

def nopo_threshold(params: NopoParams) -> float:
    return params.kappa * math.sqrt(params.kappa_p) / (4 * params.chi)


class NopoSteadyState(NamedTuple):
    alpha_s_mag: float
    alpha_p: complex
    signal_idler_product: complex


def nopo_steady_state(params: NopoParams, eps: complex) -> NopoSteadyState:
    """Above-threshold fixed-point manifold for pump drive ``eps``.

    The differential phase is free; only the product ``alpha_s*alpha_i``
    is pinned by the pump phase.
    """
    th = nopo_threshold(params)
    a = abs(eps)
    if a < th:
        raise BelowThreshold(f"|eps|={a:.6g} below threshold {th:.6g}")
    n0 = 4 * th / params.kappa * (a - th)
    u = eps / a
    return NopoSteadyState(math.sqrt(n0), complex(-params.kappa * u / (2 * params.chi)), complex(-n0 * u))


def nopo_fixed_point(params: NopoParams, eps: complex, phi: float = 0.0) -> np.ndarray:
    """A point on the fixed-point manifold: ``(alpha_s, alpha_i, alpha_p)``.

    Below threshold this is the unique fixed point and ``phi`` is ignored.
    """
    th = nopo_threshold(params)
    if abs(eps) < th:
        return np.array([0, 0, -2 * eps / math.sqrt(params.kappa_p)], complex)
    ss = nopo_steady_state(params, eps)
    phi0 = np.angle(ss.signal_idler_product) / 2
    r = ss.alpha_s_mag
    return np.array([r * np.exp(1j * (phi0 + phi)), r * np.exp(1j * (phi0 - phi)), ss.alpha_p])


def nopo_phase_diffusion_rate(params: NopoParams, eps: complex) -> float:
    th = nopo_threshold(params)
    a = abs(eps)
    if a <= th:
        raise BelowThreshold("phase diffusion is defined above threshold only")
    return params.kappa**2 / (32 * th * (a - th))


# --------------------------------------------------------------------------
# Netlist exchange
# --------------------------------------------------------------------------

def _kerr1_from(p):
    return kerr_cavity(KerrParams(tuple(p["kappas"]), p["Delta"], p["chi"]))


def _kerr2_from(p):
    return kerr_cavity_2mode(Kerr2Params(tuple(p["kappas_a"]), tuple(p["kappas_b"]), p["Delta_a"],
                                         p["Delta_b"], p["chi_a"], p["chi_b"], p["chi_ab"]))


def _complex_param(x):
    if isinstance(x, (list, tuple)):
        return complex(x[0], x[1])
    return complex(x)


COMPONENT_KINDS = {
    "laser": lambda p: laser_source(_complex_param(p.get("eta", 0.0))),
    "phase": lambda p: phase_shifter(float(p["phi"])),
    "bs": lambda p: beamsplitter(float(p["theta"])),
    "mixer": lambda p: nport_mixer(int(p["N"])),
    "kerr1": _kerr1_from,
    "kerr2": _kerr2_from,
    "nopo": lambda p: nopo(NopoParams(p["kappa"], p["kappa_p"], p["chi"])),
}


def make_component(kind: str, params: dict) -> CircuitModel:
    try:
        factory = COMPONENT_KINDS[kind]
    except KeyError:
        raise NetlistError(f"unknown component kind {kind!r}") from None
    try:
        return factory(params)
    except KeyError as exc:
        raise NetlistError(f"{kind}: missing parameter {exc.args[0]!r}") from None


def netlist_from_json(doc: dict) -> Netlist:
    """Build a :class:`Netlist` from the JSON exchange document.

    ``{"instances": {name: {"kind": ..., "params": {...}}},
    "connections": [["src:idx", "dst:idx"], ...],
    "external": {"inputs": [[name, "inst:idx"], ...], "outputs": [...]}}``
    """
    unknown = set(doc) - {"instances", "connections", "external", "version"}
    if unknown:
        raise NetlistError(f"unknown netlist keys {sorted(unknown)}")
    net = Netlist()
    for name, spec in doc["instances"].items():
        net.add(name, make_component(spec["kind"], spec.get("params", {})))
    for src, dst in doc.get("connections", []):
        net.connect(src, dst)
    ext = doc.get("external", {})
    for name, ref in ext.get("inputs", []):
        net.expose_input(name, ref)
    for name, ref in ext.get("outputs", []):
        net.expose_output(name, ref)
    return net


def quadrature_gains_from_pair(g_minus: complex, g_plus: complex) -> GainCoefficients:
    return GainCoefficients(0j, complex(g_minus), complex(g_plus))
