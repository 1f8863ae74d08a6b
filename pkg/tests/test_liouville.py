import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from stechosim.bloch import Ensemble, run
from stechosim.core import SampleSpec
from stechosim.liouville import (MAX_SPINS, DensityState, DimensionTooLarge, SpinSystem, evolve, hamiltonian,
                                 pulse, run_program_exact, signal, spin_operators, total)
from stechosim.seqlang import builtin, parse_program

# eigenvalues of the secular dipolar pair in units of d (exact diagonalization):
# |uu>, |dd> at d/2; singlet-like and triplet-like flip-flop mixtures at 0 and -d
PAIR_EIGENVALUES = (-1.0, 0.0, 0.5, 0.5)


def random_state(n, rng):
    a = rng.normal(size=(2 ** n, 2 ** n)) + 1j * rng.normal(size=(2 ** n, 2 ** n))
    rho = a @ a.conj().T
    return DensityState(rho / np.trace(rho))


def random_system(n, rng, scale=2e3):
    d = rng.uniform(-scale, scale, (n, n))
    d = np.triu(d, 1)
    return SpinSystem(tuple(rng.uniform(-scale, scale, n)), tuple(map(tuple, d + d.T)))


def test_single_spin_hamiltonian():
    H = hamiltonian(SpinSystem((300.0,)))
    np.testing.assert_allclose(H, np.diag([150.0, -150.0]))


def test_pair_eigenvalues_fixture():
    d = 2 * math.pi * 100
    E = np.linalg.eigvalsh(hamiltonian(SpinSystem.uniform_coupling((0.0, 0.0), d)))
    np.testing.assert_allclose(E, np.array(PAIR_EIGENVALUES) * d, atol=1e-10)


def test_uncoupled_pair_is_separable():
    w1, w2, t = 700.0, -1300.0, 1.7e-3
    sys2 = SpinSystem((w1, w2))
    state = DensityState.thermal(2)
    state = pulse(state, math.pi / 3, 0.4)
    got = evolve(state, sys2, t).rho
    u = np.kron(expm(-1j * w1 * t * np.diag([0.5, -0.5])), expm(-1j * w2 * t * np.diag([0.5, -0.5])))
    np.testing.assert_allclose(got, u @ state.rho @ u.conj().T, atol=1e-14)


def test_pi2_x_gives_minus_iy():
    state = pulse(DensityState.thermal(1), math.pi / 2, 0.0)
    dev = state.rho - np.eye(2) / 2
    iy = spin_operators(1)["y"][0]
    c = -np.real(np.trace(dev @ iy) / np.trace(iy @ iy))
    assert c > 0
    np.testing.assert_allclose(dev, -c * iy, atol=1e-14)


def test_signal_conventions():
    assert signal(DensityState.thermal(3)) == 0
    assert abs(signal(pulse(DensityState.thermal(1), math.pi / 2, 0.0)) - (-1j)) < 1e-14
    assert abs(signal(pulse(DensityState.thermal(2), math.pi / 2, 0.0)) - (-1j)) < 1e-14


@given(st.floats(-5e3, 5e3), st.floats(1e-5, 2e-3), st.floats(0, 5e-3), st.floats(0, 3e-3))
def test_single_spin_three_pulse_closed_form(w, tau, t1, t):
    prog = parse_program(f"p(90,x) d({tau!r}s) p(90,y) d({t1!r}s) p(90,y) d({t!r}s) acq(0s)")
    s = run_program_exact(prog, SpinSystem((w,))).s[0]
    a, b, c = w * tau, w * t1, w * t
    mx = math.cos(a) * math.cos(b) * math.sin(c) - math.sin(a) * math.cos(c)
    my = -math.cos(a) * math.cos(b) * math.cos(c) - math.sin(a) * math.sin(c)
    assert abs(s - complex(mx, my)) < 1e-12


def test_flip_flop_suppressed_by_offset_difference():
    d = 2 * math.pi * 50

    def swing(delta):
        system = SpinSystem((delta / 2, -delta / 2), ((0.0, d), (d, 0.0)))
        z1, z2 = spin_operators(2)["z"]
        state = DensityState.from_deviation(z1 - z2, 0.1, 2)
        ts = np.linspace(0, 40 / d, 4001)
        vals = [np.real(evolve(state, system, t).expect(z1 - z2)) for t in ts]
        return (max(vals) - min(vals)) / 0.1

    ratio = swing(20 * d) / swing(0.0)
    assert ratio == pytest.approx(d ** 2 / (d ** 2 + (20 * d) ** 2), rel=2e-2)


# -- invariants ----------------------------------------------------------------

@given(st.integers(1, 4), st.integers(0, 2 ** 32 - 1), st.floats(0, 5e-3), st.floats(-7, 7), st.floats(0, 7))
def test_unitarity(n, seed, t, angle, phase):
    rng = np.random.default_rng(seed)
    system = random_system(n, rng)
    state = random_state(n, rng)
    ev0 = state.eigenvalues()
    out = pulse(evolve(state, system, t), angle, phase, rng.uniform(0.8, 1.2, n))
    assert out.hermiticity_error() < 1e-10
    assert abs(out.trace() - 1) < 1e-10
    np.testing.assert_allclose(out.eigenvalues(), ev0, atol=1e-10)
    assert out.eigenvalues().min() > -1e-10


@given(st.integers(2, 4), st.integers(0, 2 ** 32 - 1), st.floats(0, 1e-2))
def test_energy_conserved_between_pulses(n, seed, t):
    rng = np.random.default_rng(seed)
    system = random_system(n, rng)
    H = hamiltonian(system)
    state = pulse(random_state(n, rng), 1.0, 0.3)
    assert abs(evolve(state, system, t).expect(H) - state.expect(H)) < 1e-10 * max(1.0, np.abs(H).max())


@given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1), st.floats(0, 1e-2))
def test_flip_flops_conserve_total_iz(n, seed, t):
    rng = np.random.default_rng(seed)
    d = rng.uniform(-1e3, 1e3, (n, n))
    d = np.triu(d, 1)
    system = SpinSystem((250.0,) * n, tuple(map(tuple, d + d.T)))
    Z = total(n, "z")
    state = random_state(n, rng)
    assert abs(evolve(state, system, t).expect(Z) - state.expect(Z)) < 1e-12


def _random_program(rng):
    parts = []
    for _ in range(rng.integers(1, 6)):
        parts.append(f"p({rng.uniform(10, 200):.6f},{rng.uniform(0, 360):.6f})")
        parts.append(f"d({rng.uniform(0, 500):.6f}us)")
        if rng.random() < 0.5:
            parts.append(f"acq({rng.uniform(0, 200):.6f}us,{rng.uniform(5, 50):.6f}us)")
    parts.append("acq(0s)")
    return parse_program(" ".join(parts))


@pytest.mark.parametrize("seed", range(50))
def test_matches_bloch_engine_without_couplings(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    offsets = rng.uniform(-5e3, 5e3, n)
    eps = rng.uniform(0.85, 1.15, n)
    prog = _random_program(rng)
    exact = run_program_exact(prog, SpinSystem(tuple(offsets)), b1_scale=eps)
    ens = Ensemble(np.zeros(n), offsets, eps, np.full(n, 1.0 / n), SampleSpec(n_isochromats=n))
    np.testing.assert_allclose(exact.s, run(prog, ens).s, atol=1e-8)


def test_phase_cycle_is_executed():
    from stechosim.seqlang import select_pathway
    prog = builtin("STE_CPMG1", 0.2e-3, 2e-3)
    system = SpinSystem((500.0, -1200.0))
    ste = run_program_exact(select_pathway(prog, "ste"), system)
    assert np.max(np.abs(ste.s)) < 1e-12  # perfect pi pulses store nothing


# -- validation ------------------------------------------------------------------

def test_dimension_limit():
    with pytest.raises(DimensionTooLarge):
        SpinSystem((0.0,) * (MAX_SPINS + 1))


@pytest.mark.parametrize("couplings", [((0.0, 1.0), (2.0, 0.0)), ((1.0, 1.0), (1.0, 0.0)), ((0.0,),)])
def test_coupling_validation(couplings):
    with pytest.raises(ValueError):
        SpinSystem((0.0, 0.0), couplings)


def test_negative_evolution_time():
    with pytest.raises(ValueError):
        evolve(DensityState.thermal(1), SpinSystem((0.0,)), -1.0)
