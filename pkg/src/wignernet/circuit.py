"""Circuit models in the semi-classical (Wigner) representation.

A model with ``m`` internal modes and ``n`` external channels obeys

    d(alpha)/dt = A alpha + a + A_NL(alpha) + B beta_in
    beta_out    = C alpha + c + D beta_in

Components are concatenated into a block-diagonal direct sum and their
interconnections are eliminated algebraically (zero-delay channels).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "CircuitError", "SingularLoop", "DanglingPort", "NetlistError",
    "Nonlinearity", "CircuitModel", "concatenate", "feedback_reduce",
    "Netlist", "elaborate", "model_to_json", "model_from_json",
]

SINGULAR_RCOND = 1e-12


class CircuitError(Exception):
    """Base class for circuit composition errors."""


class SingularLoop(CircuitError):
    """A zero-delay feedback loop has no unique algebraic solution."""


class DanglingPort(CircuitError):
    """A port is neither connected nor declared external."""


class NetlistError(CircuitError):
    """Malformed netlist (bad reference, doubly-driven port, ...)."""


# --------------------------------------------------------------------------
# Nonlinearities
# --------------------------------------------------------------------------

_NL_ARITY = {"kerr1": (1, 1), "kerr2": (2, 3), "nopo": (3, 1)}


@dataclass(frozen=True)
class Nonlinearity:
    """Tagged nonlinear drift term acting on a few internal modes.

    ``kind`` is one of

    * ``"kerr1"``: modes ``(k,)``, params ``(chi,)``;
      drift ``-i chi |a_k|^2 a_k``.
    * ``"kerr2"``: modes ``(k1, k2)``, params ``(chi_a, chi_b, chi_ab)``;
      self- and cross-Kerr detuning.
    * ``"nopo"``: modes ``(s, i, p)``, params ``(chi,)``;
      non-degenerate three-wave mixing.
    """

    kind: str
    modes: tuple[int, ...]
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in _NL_ARITY:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}")
        nm, npar = _NL_ARITY[self.kind]
        if len(self.modes) != nm or len(self.params) != npar:
            raise ValueError(f"{self.kind}: expected {nm} modes and {npar} params")
        object.__setattr__(self, "modes", tuple(int(k) for k in self.modes))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    def shifted(self, offset: int) -> "Nonlinearity":
        return Nonlinearity(self.kind, tuple(k + offset for k in self.modes), self.params)

    def remapped(self, index_map: Mapping[int, int]) -> "Nonlinearity":
        return Nonlinearity(self.kind, tuple(index_map[k] for k in self.modes), self.params)

    def drift(self, alpha: np.ndarray, out: np.ndarray) -> None:
        """Add this term's drift to ``out`` (works on ``(..., m)`` arrays)."""
        if self.kind == "kerr1":
            (k,), (chi,) = self.modes, self.params
            x = alpha[..., k]
            out[..., k] += -1j * chi * (x.real**2 + x.imag**2) * x
        elif self.kind == "kerr2":
            (k1, k2), (ca, cb, cab) = self.modes, self.params
            x, y = alpha[..., k1], alpha[..., k2]
            nx = x.real**2 + x.imag**2
            ny = y.real**2 + y.imag**2
            out[..., k1] += -1j * (ca * nx + cab * ny) * x
            out[..., k2] += -1j * (cab * nx + cb * ny) * y
        else:
            (s, i, p), (chi,) = self.modes, self.params
            xs, xi, xp = alpha[..., s], alpha[..., i], alpha[..., p]
            out[..., s] += chi * np.conj(xi) * xp
            out[..., i] += chi * np.conj(xs) * xp
            out[..., p] += -chi * xs * xi

    def jacobian(self, alpha: np.ndarray, P: np.ndarray, Q: np.ndarray) -> None:
        """Add Wirtinger derivatives d/d(alpha) to ``P`` and d/d(alpha*) to ``Q``."""
        if self.kind == "kerr1":
            (k,), (chi,) = self.modes, self.params
            x = alpha[k]
            P[k, k] += -2j * chi * abs(x) ** 2
            Q[k, k] += -1j * chi * x * x
        elif self.kind == "kerr2":
            (k1, k2), (ca, cb, cab) = self.modes, self.params
            x, y = alpha[k1], alpha[k2]
            P[k1, k1] += -1j * (2 * ca * abs(x) ** 2 + cab * abs(y) ** 2)
            Q[k1, k1] += -1j * ca * x * x
            P[k1, k2] += -1j * cab * np.conj(y) * x
            Q[k1, k2] += -1j * cab * y * x
            P[k2, k2] += -1j * (2 * cb * abs(y) ** 2 + cab * abs(x) ** 2)
            Q[k2, k2] += -1j * cb * y * y
            P[k2, k1] += -1j * cab * np.conj(x) * y
            Q[k2, k1] += -1j * cab * x * y
        else:
            (s, i, p), (chi,) = self.modes, self.params
            xs, xi, xp = alpha[s], alpha[i], alpha[p]
            P[s, p] += chi * np.conj(xi)
            Q[s, i] += chi * xp
            P[i, p] += chi * np.conj(xs)
            Q[i, s] += chi * xp
            P[p, s] += -chi * xi
            P[p, i] += -chi * xs

    def to_dict(self) -> dict:
        return {"kind": self.kind, "modes": list(self.modes), "params": list(self.params)}


# --------------------------------------------------------------------------
# CircuitModel
# --------------------------------------------------------------------------

def _frozen(x, shape, dtype=complex) -> np.ndarray:
    arr = np.array(x, dtype=dtype).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CircuitModel:
    """The ``(A, B, C, D, a, c, A_NL)`` description of a photonic circuit.

    Channel ``j`` has an input ``beta_in[j]`` labelled ``input_labels[j]``
    and an output ``beta_out[j]`` labelled ``output_labels[j]``.  For
    primitive components the two label lists coincide.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    a: np.ndarray
    c: np.ndarray
    nonlinearities: tuple[Nonlinearity, ...] = ()
    input_labels: tuple[str, ...] = ()
    output_labels: tuple[str, ...] = ()
    mode_labels: tuple[str, ...] = ()

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, dtype=complex))
        n = D.shape[0]
        if D.shape != (n, n):
            raise ValueError(f"D must be square, got {D.shape}")
        a = np.asarray(self.a, dtype=complex).reshape(-1)
        m = a.shape[0]
        object.__setattr__(self, "A", _frozen(self.A, (m, m)))
        object.__setattr__(self, "B", _frozen(self.B, (m, n)))
        object.__setattr__(self, "C", _frozen(self.C, (n, m)))
        object.__setattr__(self, "D", _frozen(D, (n, n)))
        object.__setattr__(self, "a", _frozen(a, (m,)))
        object.__setattr__(self, "c", _frozen(self.c, (n,)))
        object.__setattr__(self, "nonlinearities", tuple(self.nonlinearities))
        ins = tuple(self.input_labels) or tuple(str(j) for j in range(n))
        outs = tuple(self.output_labels) or ins
        modes = tuple(self.mode_labels) or tuple(f"mode{k}" for k in range(m))
        if len(ins) != n or len(outs) != n or len(modes) != m:
            raise ValueError("label lists inconsistent with model dimensions")
        object.__setattr__(self, "input_labels", ins)
        object.__setattr__(self, "output_labels", outs)
        object.__setattr__(self, "mode_labels", modes)
        for nl in self.nonlinearities:
            if any(k < 0 or k >= m for k in nl.modes):
                raise ValueError(f"nonlinearity {nl} refers to missing modes")

    @property
    def num_modes(self) -> int:
        return self.A.shape[0]

    @property
    def num_ports(self) -> int:
        return self.D.shape[0]

    @property
    def port_labels(self) -> tuple[str, ...]:
        return self.input_labels

    @property
    def is_static(self) -> bool:
        return self.num_modes == 0

    def input_index(self, label: str) -> int:
        return _lookup(self.input_labels, label, "input")

    def output_index(self, label: str) -> int:
        return _lookup(self.output_labels, label, "output")

    def mode_index(self, label: str) -> int:
        return _lookup(self.mode_labels, label, "mode")

    def A_NL(self, alpha, t: float = 0.0) -> np.ndarray:
        """Nonlinear drift. Autonomous for every component here; ``t`` is unused."""
        alpha = np.asarray(alpha, dtype=complex)
        out = np.zeros_like(alpha)
        for nl in self.nonlinearities:
            nl.drift(alpha, out)
        return out

    def drift(self, alpha, beta_in, t: float = 0.0) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=complex)
        beta_in = np.asarray(beta_in, dtype=complex)
        return alpha @ self.A.T + self.a + self.A_NL(alpha, t) + beta_in @ self.B.T

    def outputs(self, alpha, beta_in) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=complex)
        beta_in = np.asarray(beta_in, dtype=complex)
        return alpha @ self.C.T + self.c + beta_in @ self.D.T

    def jacobian(self, alpha) -> tuple[np.ndarray, np.ndarray]:
        """Wirtinger Jacobian ``(dF/d alpha, dF/d alpha*)`` of the drift."""
        alpha = np.asarray(alpha, dtype=complex)
        P = np.array(self.A, dtype=complex)
        Q = np.zeros_like(P)
        for nl in self.nonlinearities:
            nl.jacobian(alpha, P, Q)
        return P, Q

    def relabel(self, prefix: str) -> "CircuitModel":
        """Prefix every port and mode label with ``prefix + '.'``."""
        pre = f"{prefix}."
        return _replace(
            self,
            input_labels=tuple(pre + s for s in self.input_labels),
            output_labels=tuple(pre + s for s in self.output_labels),
            mode_labels=tuple(pre + s for s in self.mode_labels),
        )

    def permute_ports(self, in_order: Sequence[int], out_order: Sequence[int]) -> "CircuitModel":
        """Reorder channels: new input ``j`` is old input ``in_order[j]``."""
        ii, oo = list(in_order), list(out_order)
        return _replace(
            self, B=self.B[:, ii], C=self.C[oo, :], D=self.D[np.ix_(oo, ii)], c=self.c[oo],
            input_labels=tuple(self.input_labels[j] for j in ii),
            output_labels=tuple(self.output_labels[j] for j in oo),
        )

    def equals(self, other: "CircuitModel", atol: float = 0.0) -> bool:
        """Field-wise comparison (labels exactly, matrices to ``atol``)."""
        if (self.num_modes, self.num_ports) != (other.num_modes, other.num_ports):
            return False
        for name in "ABCDac":
            if not np.allclose(getattr(self, name), getattr(other, name), rtol=0, atol=atol):
                return False
        return (self.nonlinearities == other.nonlinearities
                and self.input_labels == other.input_labels
                and self.output_labels == other.output_labels
                and self.mode_labels == other.mode_labels)


def _lookup(labels, label, what):
    try:
        return labels.index(label)
    except ValueError:
        raise KeyError(f"no {what} labelled {label!r}") from None


def _replace(model: CircuitModel, **changes) -> CircuitModel:
    fields = dict(A=model.A, B=model.B, C=model.C, D=model.D, a=model.a, c=model.c,
                  nonlinearities=model.nonlinearities, input_labels=model.input_labels,
                  output_labels=model.output_labels, mode_labels=model.mode_labels)
    fields.update(changes)
    return CircuitModel(**fields)


# --------------------------------------------------------------------------
# Composition
# --------------------------------------------------------------------------

def concatenate(models: Sequence[CircuitModel], names: Sequence[str] | None = None) -> CircuitModel:
    """Direct sum of non-interacting models.

    If ``names`` is given, every label of model ``k`` is prefixed with
    ``names[k]``.
    """
    models = list(models)
    if not models:
        raise ValueError("concatenate needs at least one model")
    if names is not None:
        models = [mdl.relabel(nm) for mdl, nm in zip(models, names, strict=True)]
    if len(models) == 1:
        return models[0]
    m = sum(mdl.num_modes for mdl in models)
    n = sum(mdl.num_ports for mdl in models)
    A = np.zeros((m, m), complex)
    B = np.zeros((m, n), complex)
    C = np.zeros((n, m), complex)
    D = np.zeros((n, n), complex)
    nls = []
    km = kn = 0
    for mdl in models:
        dm, dn = mdl.num_modes, mdl.num_ports
        A[km:km + dm, km:km + dm] = mdl.A
        B[km:km + dm, kn:kn + dn] = mdl.B
        C[kn:kn + dn, km:km + dm] = mdl.C
        D[kn:kn + dn, kn:kn + dn] = mdl.D
        nls.extend(nl.shifted(km) for nl in mdl.nonlinearities)
        km += dm
        kn += dn
    return CircuitModel(
        A=A, B=B, C=C, D=D,
        a=np.concatenate([mdl.a for mdl in models]),
        c=np.concatenate([mdl.c for mdl in models]),
        nonlinearities=tuple(nls),
        input_labels=sum((mdl.input_labels for mdl in models), ()),
        output_labels=sum((mdl.output_labels for mdl in models), ()),
        mode_labels=sum((mdl.mode_labels for mdl in models), ()),
    )


def feedback_reduce(model: CircuitModel, loops: Iterable[tuple[int, int]]) -> CircuitModel:
    """Close zero-delay loops ``output k -> input l`` and eliminate them.

    With ``K``/``L`` the looped outputs/inputs and ``R``/``F`` the remaining
    ones, the looped inputs are ``(I - D_KL)^-1 (C_K alpha + c_K + D_KF beta_F)``.
    Substituting this back keeps the mode count and the nonlinearity
    untouched.  Remaining channels pair up in ascending index order.
    """
    loops = [(int(k), int(l)) for k, l in loops]
    n = model.num_ports
    if not loops:
        return model
    K = [k for k, _ in loops]
    L = [l for _, l in loops]
    if len(set(K)) != len(K) or len(set(L)) != len(L):
        raise NetlistError("loop ports must be distinct")
    if any(not 0 <= j < n for j in K + L):
        raise NetlistError("loop port index out of range")
    R = [j for j in range(n) if j not in set(K)]
    F = [j for j in range(n) if j not in set(L)]

    A, B, C, D, a, c = model.A, model.B, model.C, model.D, model.a, model.c
    S = np.eye(len(K)) - D[np.ix_(K, L)]
    if S.size and 1.0 / np.linalg.cond(S, 1) < SINGULAR_RCOND:
        raise SingularLoop(
            f"algebraic loop matrix is singular (outputs {K} -> inputs {L})")
    # M = S^-1 applied to the stacked right-hand sides in one solve.
    rhs = np.hstack([C[K, :], c[K][:, None], D[np.ix_(K, F)]])
    sol = np.linalg.solve(S, rhs)
    m = model.num_modes
    MC, Mc, MD = sol[:, :m], sol[:, m], sol[:, m + 1:]
    BL = B[:, L]
    DRL = D[np.ix_(R, L)]
    return CircuitModel(
        A=A + BL @ MC,
        a=a + BL @ Mc,
        B=B[:, F] + BL @ MD,
        C=C[R, :] + DRL @ MC,
        c=c[R] + DRL @ Mc,
        D=D[np.ix_(R, F)] + DRL @ MD,
        nonlinearities=model.nonlinearities,
        input_labels=tuple(model.input_labels[j] for j in F),
        output_labels=tuple(model.output_labels[j] for j in R),
        mode_labels=model.mode_labels,
    )


# --------------------------------------------------------------------------
# Netlists
# --------------------------------------------------------------------------

PortRef = tuple[str, int]


def _parse_ref(ref) -> tuple[str, int | str]:
    if isinstance(ref, str):
        inst, _, port = ref.rpartition(":")
        if not inst:
            raise NetlistError(f"bad port reference {ref!r}, expected 'instance:port'")
        return inst, int(port) if port.lstrip("-").isdigit() else port
    inst, port = ref
    return str(inst), port


@dataclass
class Netlist:
    """Instances, port-to-port connections and the external port map.

    Ports are referenced as ``(instance, index)`` pairs or ``"inst:index"``
    strings; a port label may stand in for the index.
    """

    instances: dict[str, CircuitModel] = field(default_factory=dict)
    connections: list[tuple[PortRef, PortRef]] = field(default_factory=list)
    external_inputs: dict[str, PortRef] = field(default_factory=dict)
    external_outputs: dict[str, PortRef] = field(default_factory=dict)

    def add(self, name: str, model: CircuitModel) -> str:
        if name in self.instances:
            raise NetlistError(f"duplicate instance {name!r}")
        if ":" in name:
            raise NetlistError(f"instance name {name!r} may not contain ':'")
        self.instances[name] = model
        return name

    def _resolve(self, ref, direction: str) -> PortRef:
        inst, port = _parse_ref(ref)
        if inst not in self.instances:
            raise NetlistError(f"unknown instance {inst!r}")
        mdl = self.instances[inst]
        if isinstance(port, str):
            labels = mdl.output_labels if direction == "out" else mdl.input_labels
            if port not in labels:
                raise NetlistError(f"{inst} has no {direction}put port {port!r}")
            port = labels.index(port)
        if not 0 <= port < mdl.num_ports:
            raise NetlistError(f"{inst}:{port} out of range")
        return inst, port

    def connect(self, src, dst) -> None:
        """Feed output ``src`` into input ``dst``."""
        self.connections.append((self._resolve(src, "out"), self._resolve(dst, "in")))

    def expose_input(self, name: str, ref) -> None:
        if name in self.external_inputs:
            raise NetlistError(f"duplicate external input {name!r}")
        self.external_inputs[name] = self._resolve(ref, "in")

    def expose_output(self, name: str, ref) -> None:
        if name in self.external_outputs:
            raise NetlistError(f"duplicate external output {name!r}")
        self.external_outputs[name] = self._resolve(ref, "out")

    def validate(self) -> None:
        srcs = [self._resolve(s, "out") for s, _ in self.connections]
        dsts = [self._resolve(d, "in") for _, d in self.connections]
        if len(set(srcs)) != len(srcs):
            raise NetlistError("an output port is the source of two connections")
        if len(set(dsts)) != len(dsts):
            raise NetlistError("an input port is the target of two connections")
        ext_in = [self._resolve(r, "in") for r in self.external_inputs.values()]
        ext_out = [self._resolve(r, "out") for r in self.external_outputs.values()]
        if len(set(ext_in)) != len(ext_in) or len(set(ext_out)) != len(ext_out):
            raise NetlistError("a port is exposed twice")
        if set(ext_in) & set(dsts):
            raise NetlistError("an input port is both connected and external")
        if set(ext_out) & set(srcs):
            raise NetlistError("an output port is both connected and external")
        for inst, mdl in self.instances.items():
            for j in range(mdl.num_ports):
                if (inst, j) not in set(dsts) | set(ext_in):
                    raise DanglingPort(f"input {inst}:{j} ({mdl.input_labels[j]}) is unbound")
                if (inst, j) not in set(srcs) | set(ext_out):
                    raise DanglingPort(f"output {inst}:{j} ({mdl.output_labels[j]}) is unbound")


def elaborate(netlist: Netlist) -> CircuitModel:
    """Flatten a netlist into a single model on its external ports.

    Instances are concatenated in sorted-name order and loops are closed in
    sorted order, so the result does not depend on insertion order.  External
    channels follow the declaration order of the external maps.
    """
    netlist.validate()
    if not netlist.instances:
        raise NetlistError("empty netlist")
    names = sorted(netlist.instances)
    offsets, off = {}, 0
    for nm in names:
        offsets[nm] = off
        off += netlist.instances[nm].num_ports
    flat = concatenate([netlist.instances[nm] for nm in names], names=names)

    def gidx(ref):
        inst, j = ref
        return offsets[inst] + j

    loops = sorted((gidx(netlist._resolve(s, "out")), gidx(netlist._resolve(d, "in")))
                   for s, d in netlist.connections)
    reduced = feedback_reduce(flat, loops)

    looped_out = {k for k, _ in loops}
    looped_in = {l for _, l in loops}
    F = [j for j in range(flat.num_ports) if j not in looped_in]
    R = [j for j in range(flat.num_ports) if j not in looped_out]
    in_pos = {g: i for i, g in enumerate(F)}
    out_pos = {g: i for i, g in enumerate(R)}
    in_order = [in_pos[gidx(netlist._resolve(r, "in"))] for r in netlist.external_inputs.values()]
    out_order = [out_pos[gidx(netlist._resolve(r, "out"))] for r in netlist.external_outputs.values()]
    if len(in_order) != reduced.num_ports or len(out_order) != reduced.num_ports:
        raise DanglingPort("external port map does not cover the unbound ports")
    model = reduced.permute_ports(in_order, out_order)
    return _replace(model, input_labels=tuple(netlist.external_inputs),
                    output_labels=tuple(netlist.external_outputs))


# --------------------------------------------------------------------------
# JSON exchange
# --------------------------------------------------------------------------

def _cmat_to_json(x: np.ndarray):
    return np.stack([x.real, x.imag], axis=-1).tolist()


def _cmat_from_json(x, shape):
    arr = np.asarray(x, dtype=float)
    if arr.size == 0:
        return np.zeros(shape, complex)
    return (arr[..., 0] + 1j * arr[..., 1]).reshape(shape)


def model_to_json(model: CircuitModel) -> dict:
    """Dense JSON form, complex entries as ``[re, im]`` pairs."""
    return {
        "format": "wignernet-model",
        "version": 1,
        "num_modes": model.num_modes,
        "num_ports": model.num_ports,
        "A": _cmat_to_json(model.A), "B": _cmat_to_json(model.B),
        "C": _cmat_to_json(model.C), "D": _cmat_to_json(model.D),
        "a": _cmat_to_json(model.a), "c": _cmat_to_json(model.c),
        "nonlinearities": [nl.to_dict() for nl in model.nonlinearities],
        "input_labels": list(model.input_labels),
        "output_labels": list(model.output_labels),
        "mode_labels": list(model.mode_labels),
    }


def model_from_json(doc: dict) -> CircuitModel:
    m, n = doc["num_modes"], doc["num_ports"]
    return CircuitModel(
        A=_cmat_from_json(doc["A"], (m, m)), B=_cmat_from_json(doc["B"], (m, n)),
        C=_cmat_from_json(doc["C"], (n, m)), D=_cmat_from_json(doc["D"], (n, n)),
        a=_cmat_from_json(doc["a"], (m,)), c=_cmat_from_json(doc["c"], (n,)),
        nonlinearities=tuple(Nonlinearity(d["kind"], tuple(d["modes"]), tuple(d["params"]))
                             for d in doc["nonlinearities"]),
        input_labels=tuple(doc["input_labels"]), output_labels=tuple(doc["output_labels"]),
        mode_labels=tuple(doc["mode_labels"]),
    )


def dumps_model(model: CircuitModel) -> str:
    return json.dumps(model_to_json(model))
