import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wignernet.circuit import (CircuitModel, DanglingPort, Netlist, NetlistError, Nonlinearity,
                               SingularLoop, concatenate, elaborate, feedback_reduce,
                               model_from_json, model_to_json)
from wignernet.components import (KerrParams, NopoParams, beamsplitter, kerr_cavity,
                                  laser_source, nopo, nport_mixer, phase_shifter)


def test_concatenate_single_is_identity():
    m = kerr_cavity(KerrParams((1.0, 0.5), 0.3, 0.01))
    assert concatenate([m]) is m


def test_concatenate_identity_beamsplitters():
    m = concatenate([beamsplitter(0.0), beamsplitter(0.0)])
    assert m.num_ports == 4 and m.num_modes == 0
    np.testing.assert_array_equal(m.D, np.eye(4))


def test_concatenate_phase_and_laser():
    m = concatenate([phase_shifter(np.pi / 2), laser_source(2.0)])
    np.testing.assert_allclose(m.D, np.diag([1j, 1.0]), atol=1e-15)
    np.testing.assert_allclose(m.c, [0.0, 2.0])


def test_concatenate_names_prefix_labels():
    m = concatenate([beamsplitter(0.1), kerr_cavity(KerrParams((1.0,), 0.0, 0.0))], ["bs", "cav"])
    assert m.input_labels[0].startswith("bs.") and m.mode_labels == ("cav.a",)


def test_series_phases_add():
    m = concatenate([phase_shifter(0.3), phase_shifter(1.1)])
    r = feedback_reduce(m, [(0, 1)])
    assert r.num_ports == 1
    np.testing.assert_allclose(r.D, [[np.exp(1.4j)]], atol=1e-14)


def test_self_loop_through_identity_is_singular():
    with pytest.raises(SingularLoop):
        feedback_reduce(beamsplitter(0.0), [(1, 1)])


def test_cavity_then_phase_matches_hand_reduction():
    p = KerrParams((0.7,), 0.4, 0.03)
    phi = 0.9
    net = Netlist()
    net.add("cav", kerr_cavity(p))
    net.add("ps", phase_shifter(phi))
    net.connect("cav:0", "ps:0")
    net.expose_input("in", "cav:0")
    net.expose_output("out", "ps:0")
    red = elaborate(net)
    k = np.sqrt(0.7)
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.normal(size=1) + 1j * rng.normal(size=1)
        b = rng.normal(size=1) + 1j * rng.normal(size=1)
        drift = (-0.35 - 0.4j) * a - 0.03j * abs(a) ** 2 * a - k * b
        out = np.exp(1j * phi) * (k * a + b)
        np.testing.assert_allclose(red.drift(a, b), drift, atol=1e-12)
        np.testing.assert_allclose(red.outputs(a, b), out, atol=1e-12)


def test_single_instance_netlist_is_the_instance():
    m = kerr_cavity(KerrParams((1.0, 2.0), 0.1, 0.2))
    net = Netlist()
    net.add("k", m)
    net.expose_input("p", "k:0")
    net.expose_input("q", "k:1")
    net.expose_output("p", "k:0")
    net.expose_output("q", "k:1")
    e = elaborate(net)
    for name in "ABCDac":
        np.testing.assert_array_equal(getattr(e, name), getattr(m, name))
    assert e.nonlinearities == m.nonlinearities


def test_mach_zehnder_switches_fully():
    net = Netlist()
    net.add("b1", beamsplitter(np.pi / 4))
    net.add("ps", phase_shifter(np.pi))
    net.add("b2", beamsplitter(np.pi / 4))
    net.connect("b1:0", "b2:0")
    net.connect("b1:1", "ps:0")
    net.connect("ps:0", "b2:1")
    net.expose_input("i1", "b1:0")
    net.expose_input("i2", "b1:1")
    net.expose_output("o1", "b2:0")
    net.expose_output("o2", "b2:1")
    D = np.abs(elaborate(net).D)
    assert np.all((np.abs(D) < 1e-12) | (np.abs(D - 1) < 1e-12))


def test_two_cavity_interferometer_dimensions():
    cav = kerr_cavity(KerrParams((1.0,), 0.77, 0.01))
    net = Netlist()
    net.add("bs_in", beamsplitter(np.pi / 4))
    net.add("c1", cav)
    net.add("c2", cav)
    net.add("bs_out", beamsplitter(np.pi / 4))
    net.connect("bs_in:0", "c1:0")
    net.connect("bs_in:1", "c2:0")
    net.connect("c1:0", "bs_out:0")
    net.connect("c2:0", "bs_out:1")
    for nm, ref in [("sig", "bs_in:0"), ("bias", "bs_in:1")]:
        net.expose_input(nm, ref)
    for nm, ref in [("sig", "bs_out:1"), ("bias", "bs_out:0")]:
        net.expose_output(nm, ref)
    m = elaborate(net)
    # two channels (sig, bias), each with an input and an output: 4 ports in all
    assert m.num_modes == 2 and m.num_ports == 2
    assert len(m.input_labels) + len(m.output_labels) == 4


def test_dangling_port_detected():
    net = Netlist()
    net.add("b", beamsplitter(0.2))
    net.expose_input("i", "b:0")
    net.expose_output("o", "b:0")
    with pytest.raises(DanglingPort):
        elaborate(net)


def test_double_driven_input_rejected():
    net = Netlist()
    net.add("a", beamsplitter(0.2))
    net.add("b", phase_shifter(0.1))
    net.connect("a:0", "b:0")
    net.connect("a:1", "b:0")
    with pytest.raises(NetlistError):
        net.validate()


def test_bad_references():
    net = Netlist()
    net.add("a", beamsplitter(0.2))
    with pytest.raises(NetlistError):
        net.connect("nope:0", "a:0")
    with pytest.raises(NetlistError):
        net.connect("a:5", "a:0")
    with pytest.raises(NetlistError):
        net.add("a", beamsplitter(0.1))


def test_connect_by_label():
    net = Netlist()
    net.add("k", nopo(NopoParams(1.0, 2.0, 0.1)))
    net.add("p", phase_shifter(0.2))
    net.connect("k:idler", "p:0")
    assert net.connections[0] == (("k", 1), ("p", 0))


def test_nonlinearity_vanishes_at_zero():
    m = kerr_cavity(KerrParams((1.0,), 0.3, 0.5))
    np.testing.assert_array_equal(m.A_NL(np.zeros(1)), np.zeros(1))


def test_nonlinearity_validation():
    with pytest.raises(ValueError):
        Nonlinearity("kerr1", (0, 1), (0.1,))
    with pytest.raises(ValueError):
        Nonlinearity("cubic", (0,), (0.1,))


def test_model_dimension_checks():
    with pytest.raises(ValueError):
        CircuitModel(A=np.zeros((1, 1)), B=np.zeros((1, 2)), C=np.zeros((2, 1)),
                     D=np.eye(3), a=np.zeros(1), c=np.zeros(3))


def test_json_roundtrip():
    m = kerr_cavity(KerrParams((1.0, 0.5), 0.3, 0.01))
    doc = json.loads(json.dumps(model_to_json(m)))
    assert model_from_json(doc).equals(m)


# --------------------------------------------------------------------------
# Properties on random static netlists
# --------------------------------------------------------------------------

def _random_static(rng):
    kind = rng.integers(3)
    if kind == 0:
        return beamsplitter(rng.uniform(0, np.pi))
    if kind == 1:
        return phase_shifter(rng.uniform(-np.pi, np.pi))
    return nport_mixer(int(rng.integers(2, 4)))


def _random_netlist(seed, n_inst=4):
    rng = np.random.default_rng(seed)
    inst = {f"u{k}": _random_static(rng) for k in range(n_inst)}
    outs = [(nm, j) for nm, m in inst.items() for j in range(m.num_ports)]
    ins = list(outs)
    rng.shuffle(outs)
    rng.shuffle(ins)
    n_conn = int(rng.integers(0, len(outs)))
    conns = list(zip(outs[:n_conn], ins[:n_conn]))
    ext_in = ins[n_conn:]
    ext_out = outs[n_conn:]
    return inst, conns, ext_in, ext_out


def _build(inst, conns, ext_in, ext_out, order=None):
    net = Netlist()
    names = list(inst) if order is None else order
    for nm in names:
        net.add(nm, inst[nm])
    for s, d in conns:
        net.connect(s, d)
    for k, r in enumerate(ext_in):
        net.expose_input(f"in{k}", r)
    for k, r in enumerate(ext_out):
        net.expose_output(f"out{k}", r)
    return net


def _brute_force(inst, conns, ext_in, ext_out, beta):
    """Solve the coupled port equations of all static instances at once."""
    names = list(inst)
    off, o = {}, 0
    for nm in names:
        off[nm] = o
        o += inst[nm].num_ports
    n = o
    D = np.zeros((n, n), complex)
    c = np.zeros(n, complex)
    for nm in names:
        k = off[nm]
        p = inst[nm].num_ports
        D[k:k + p, k:k + p] = inst[nm].D
        c[k:k + p] = inst[nm].c
    # unknown: every input signal u; u_dst = y_src = D u + c for connections
    M = np.eye(n, dtype=complex)
    rhs = np.zeros(n, complex)
    for (si, sj), (di, dj) in conns:
        r = off[di] + dj
        M[r] -= D[off[si] + sj]
        rhs[r] += c[off[si] + sj]
    for k, (ii, ij) in enumerate(ext_in):
        rhs[off[ii] + ij] = beta[k]
    u = np.linalg.solve(M, rhs)
    y = D @ u + c
    return np.array([y[off[i] + j] for i, j in ext_out])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reduction_matches_brute_force(seed):
    inst, conns, ext_in, ext_out = _random_netlist(seed)
    try:
        model = elaborate(_build(inst, conns, ext_in, ext_out))
    except SingularLoop:
        return
    rng = np.random.default_rng(seed + 1)
    beta = rng.normal(size=len(ext_in)) + 1j * rng.normal(size=len(ext_in))
    got = model.outputs(np.zeros(0), beta)
    np.testing.assert_allclose(got, _brute_force(inst, conns, ext_in, ext_out, beta), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_static_elaboration_is_unitary(seed):
    inst, conns, ext_in, ext_out = _random_netlist(seed)
    try:
        D = elaborate(_build(inst, conns, ext_in, ext_out)).D
    except SingularLoop:
        return
    assert np.abs(D.conj().T @ D - np.eye(len(D))).max() < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.randoms(use_true_random=False))
def test_elaboration_order_independent(seed, rnd):
    inst, conns, ext_in, ext_out = _random_netlist(seed)
    try:
        ref = elaborate(_build(inst, conns, ext_in, ext_out))
    except SingularLoop:
        return
    order = list(inst)
    rnd.shuffle(order)
    conns2 = list(conns)
    rnd.shuffle(conns2)
    perm = list(range(len(ext_in)))
    rnd.shuffle(perm)
    net = _build(inst, conns2, [ext_in[p] for p in perm], ext_out, order)
    # relabel the permuted inputs back to the reference names
    net.external_inputs = {f"in{perm[k]}": r for k, r in enumerate(net.external_inputs.values())}
    got = elaborate(net)
    back = [list(got.input_labels).index(f"in{k}") for k in range(len(perm))]
    got = got.permute_ports(back, range(got.num_ports))
    assert got.equals(ref, atol=1e-13)


def test_reduced_nonlinearity_is_unchanged():
    cav = kerr_cavity(KerrParams((1.0,), 0.3, 0.2))
    net = Netlist()
    net.add("c", cav)
    net.add("b", beamsplitter(0.4))
    net.connect("c:0", "b:0")
    net.connect("b:0", "c:0")
    net.expose_input("x", "b:1")
    net.expose_output("y", "b:1")
    m = elaborate(net)
    assert m.nonlinearities == cav.nonlinearities
    np.testing.assert_allclose(m.A_NL(np.array([2.0 + 1j])), cav.A_NL(np.array([2.0 + 1j])))
