"""Exact density-matrix dynamics of a few dipolar-coupled spins 1/2.

The Hamiltonian between pulses is

    H = sum_j dw_j Iz_j + sum_{j<k} d_jk (2 Iz_j Iz_k - (I+_j I-_k + I-_j I+_k) / 2)

(secular dipolar coupling).  Pulses are ``exp(-i theta sum_j eps_j I^phi_j)``
and the signal is ``Tr[rho sum_j I+_j]``, normalized so that a full pi/2
rotation of the thermal state gives ``-i``, the same convention as the
isochromat engine.  There is no relaxation: this engine exists to isolate
coherent flip-flop physics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .bloch import SignalTrace
from .seqlang import Acquire, Pulse, PulseProgram

MAX_SPINS = 10


class DimensionTooLarge(ValueError):
    pass


# --------------------------------------------------------------------------
# spin operators
# --------------------------------------------------------------------------

_SX = np.array([[0, 0.5], [0.5, 0]], dtype=complex)
_SY = np.array([[0, -0.5j], [0.5j, 0]], dtype=complex)
_SZ = np.array([[0.5, 0], [0, -0.5]], dtype=complex)
_SP = np.array([[0, 1], [0, 0]], dtype=complex)
_SM = np.array([[0, 0], [1, 0]], dtype=complex)


def _embed(op: np.ndarray, j: int, n: int) -> np.ndarray:
    left = np.eye(2 ** j)
    right = np.eye(2 ** (n - j - 1))
    return np.kron(np.kron(left, op), right)


@lru_cache(maxsize=None)
def spin_operators(n: int) -> dict[str, tuple[np.ndarray, ...]]:
    """Single-spin operators ``Ix, Iy, Iz, Ip, Im`` embedded in ``n`` spins."""
    _check_n(n)
    ops = {name: tuple(_embed(m, j, n) for j in range(n))
           for name, m in (("x", _SX), ("y", _SY), ("z", _SZ), ("p", _SP), ("m", _SM))}
    for group in ops.values():
        for a in group:
            a.setflags(write=False)
    return ops


def total(n: int, axis: str) -> np.ndarray:
    return sum(spin_operators(n)[axis])


def _check_n(n: int):
    if n < 1:
        raise ValueError("need at least one spin")
    if n > MAX_SPINS:
        raise DimensionTooLarge(f"{n} spins exceed the supported maximum of {MAX_SPINS}")


# --------------------------------------------------------------------------
# system and state
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SpinSystem:
    """Offsets (rad/s) and a symmetric coupling matrix (rad/s)."""

    offsets: tuple[float, ...]
    couplings: tuple[tuple[float, ...], ...] = ()

    def __post_init__(self):
        offsets = tuple(float(w) for w in self.offsets)
        n = len(offsets)
        _check_n(n)
        if self.couplings is None or len(self.couplings) == 0:
            d = np.zeros((n, n))
        else:
            d = np.asarray(self.couplings, dtype=float)
        if d.shape != (n, n):
            raise ValueError(f"couplings must be {n}x{n}, got {d.shape}")
        if not np.allclose(d, d.T, rtol=0, atol=1e-12 * max(1.0, np.abs(d).max())):
            raise ValueError("couplings must be symmetric")
        if np.any(np.diag(d) != 0):
            raise ValueError("couplings must have a zero diagonal")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "couplings", tuple(tuple(float(v) for v in row) for row in d))

    @property
    def n(self) -> int:
        return len(self.offsets)

    @property
    def dim(self) -> int:
        return 2 ** self.n

    @classmethod
    def uniform_coupling(cls, offsets, d: float) -> "SpinSystem":
        n = len(offsets)
        c = np.full((n, n), float(d))
        np.fill_diagonal(c, 0.0)
        return cls(tuple(offsets), tuple(map(tuple, c)))


@dataclass(frozen=True, eq=False)
class DensityState:
    """Full density matrix ``rho`` (trace one).

    ``norm`` converts ``Tr[rho sum I+]`` into the engine's signal units.
    """

    rho: np.ndarray
    norm: float = 1.0

    @property
    def n(self) -> int:
        return int(round(math.log2(self.rho.shape[0])))

    @classmethod
    def thermal(cls, n: int, polarization: float | None = None) -> "DensityState":
        """High-temperature equilibrium ``1/2**n + beta * sum Iz``.

        The default ``beta = 1 / (n 2**n)`` keeps ``rho`` positive; the signal
        is linear in ``beta`` and normalized by it, so its value is immaterial.
        """
        _check_n(n)
        beta = 1.0 / (n * 2 ** n) if polarization is None else float(polarization)
        return cls.from_deviation(total(n, "z"), beta, n)

    @classmethod
    def from_deviation(cls, deviation: np.ndarray, beta: float, n: int | None = None) -> "DensityState":
        """``1/2**n + beta * deviation``; a full pi/2 of ``n`` spins reads ``-i``."""
        dim = deviation.shape[0]
        n = n if n is not None else int(round(math.log2(dim)))
        rho = np.eye(dim, dtype=complex) / dim + beta * np.asarray(deviation, dtype=complex)
        return cls(rho, beta * n * dim / 4.0)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.rho - self.rho.conj().T)))

    def trace(self) -> complex:
        return complex(np.trace(self.rho))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh((self.rho + self.rho.conj().T) / 2)

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.einsum("ij,ji->", self.rho, op))

    def _with(self, rho: np.ndarray) -> "DensityState":
        return DensityState(rho, self.norm)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def hamiltonian(system: SpinSystem) -> np.ndarray:
    n = system.n
    ops = spin_operators(n)
    H = np.zeros((system.dim, system.dim), dtype=complex)
    for j, w in enumerate(system.offsets):
        if w:
            H += w * ops["z"][j]
    for j in range(n):
        for k in range(j + 1, n):
            d = system.couplings[j][k]
            if d:
                H += d * (2 * ops["z"][j] @ ops["z"][k]
                          - 0.5 * (ops["p"][j] @ ops["m"][k] + ops["m"][j] @ ops["p"][k]))
    return H


@lru_cache(maxsize=64)
def _eigensystem(system: SpinSystem) -> tuple[np.ndarray, np.ndarray]:
    E, V = np.linalg.eigh(hamiltonian(system))
    E.setflags(write=False)
    V.setflags(write=False)
    return E, V


def propagator(system: SpinSystem, t: float) -> np.ndarray:
    """``exp(-i H t)`` from the cached eigendecomposition."""
    E, V = _eigensystem(system)
    return (V * np.exp(-1j * E * t)) @ V.conj().T


def evolve(state: DensityState, system: SpinSystem, t: float) -> DensityState:
    if t < 0:
        raise ValueError(f"evolution time must be >= 0, got {t}")
    if t == 0:
        return state
    U = propagator(system, t)
    return state._with(U @ state.rho @ U.conj().T)


def pulse_operator(n: int, angle: float, phase: float, per_spin_scale=None) -> np.ndarray:
    scales = np.ones(n) if per_spin_scale is None else np.broadcast_to(
        np.asarray(per_spin_scale, dtype=float), (n,))
    U = np.ones((1, 1), dtype=complex)
    c, s = math.cos(phase), math.sin(phase)
    for eps in scales:
        a = eps * angle / 2
        # exp(-i a (cos(phase) sx + sin(phase) sy)) with Pauli matrices
        u = np.array([[math.cos(a), -1j * math.sin(a) * complex(c, -s)],
                      [-1j * math.sin(a) * complex(c, s), math.cos(a)]])
        U = np.kron(U, u)
    return U


def pulse(state: DensityState, nominal_angle: float, phase: float, per_spin_scale=None) -> DensityState:
    """Apply ``exp(-i theta sum_j eps_j I^phi_j)``."""
    if not math.isfinite(nominal_angle):
        raise ValueError("pulse angle must be finite")
    U = pulse_operator(state.n, nominal_angle, phase, per_spin_scale)
    return state._with(U @ state.rho @ U.conj().T)


def signal(state: DensityState) -> complex:
    n = state.n
    return state.expect(total(n, "p")) / state.norm


def run_program_exact(program: PulseProgram, system: SpinSystem, initial: DensityState | None = None,
                      *, b1_scale=None) -> SignalTrace:
    """Propagate ``initial`` (default: thermal) through ``program``.

    ``b1_scale`` gives per-spin flip-angle multipliers.  An attached phase
    cycle is executed and averaged with its receiver phases.
    """
    if system.n > MAX_SPINS:
        raise DimensionTooLarge(f"{system.n} spins exceed {MAX_SPINS}")
    initial = initial if initial is not None else DensityState.thermal(system.n)
    steps = program.phase_cycle or ()
    cycle = ([(tuple(math.radians(p) for p in st.pulse_shifts), math.radians(st.receiver_deg))
              for st in steps] or [((0.0,) * len(program.pulses), 0.0)])
    times = np.array(program.sample_times())
    obs = total(system.n, "p")
    # one propagator per distinct interval keeps long trains cheap
    cache: dict[float, np.ndarray] = {}

    def U(dt):
        if dt not in cache:
            cache[dt] = propagator(system, dt)
        return cache[dt]

    acc = np.zeros(len(times), dtype=complex)
    for shifts, receiver in cycle:
        rho = initial.rho.copy()
        out = []
        k = 0
        for ev in program.events:
            if isinstance(ev, Pulse):
                P = pulse_operator(system.n, ev.angle, ev.phase + shifts[k], b1_scale)
                rho = P @ rho @ P.conj().T
                k += 1
            elif isinstance(ev, Acquire):
                prev = 0.0
                for off in ev.sample_offsets():
                    if off > prev:
                        u = U(off - prev)
                        rho = u @ rho @ u.conj().T
                    prev = off
                    out.append(np.einsum("ij,ji->", rho, obs))
                if ev.duration > prev:
                    u = U(ev.duration - prev)
                    rho = u @ rho @ u.conj().T
            elif ev.duration > 0:
                u = U(ev.duration)
                rho = u @ rho @ u.conj().T
        acc = acc + np.array(out) * complex(math.cos(receiver), -math.sin(receiver))
    return SignalTrace(times, acc / len(cycle) / initial.norm)
