"""Physical data model shared by the isochromat and density-matrix engines.

Conventions
-----------
* Magnetization is normalized to the thermal-equilibrium value, M0 = 1.
* RF pulses are right-handed rotations about an axis in the xy plane given by
  its phase (0 = x, pi/2 = y).  A (pi/2)_x pulse therefore maps +z onto -y.
* Free precession is a right-handed rotation about +z by ``omega * t``, so
  -y evolves into ``(sin wt, -cos wt, 0)``.
* Angles and frequencies are radians and rad/s; times are seconds; positions
  are cm; gradients are G/cm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

#: proton gyromagnetic ratio in rad/(s*G)
GAMMA_1H = 26752.2128

OFFSET_KINDS = ("delta", "uniform", "gaussian", "lorentzian")


@dataclass(frozen=True)
class Magnetization:
    mx: float = 0.0
    my: float = 0.0
    mz: float = 1.0

    @classmethod
    def equilibrium(cls) -> "Magnetization":
        return cls(0.0, 0.0, 1.0)

    @classmethod
    def from_array(cls, v) -> "Magnetization":
        x, y, z = (float(c) for c in v)
        return cls(x, y, z)

    def as_array(self) -> np.ndarray:
        return np.array([self.mx, self.my, self.mz])

    @property
    def transverse(self) -> complex:
        return complex(self.mx, self.my)

    def norm(self) -> float:
        return math.sqrt(self.mx * self.mx + self.my * self.my + self.mz * self.mz)


@dataclass(frozen=True)
class Isochromat:
    """One spin packet.

    The total precession frequency under a gradient is
    ``delta_omega + gamma * g * z``; it is derived on demand and never stored.
    """

    z: float = 0.0
    delta_omega: float = 0.0
    b1_scale: float = 1.0
    weight: float = 1.0
    m: Magnetization = field(default_factory=Magnetization.equilibrium)

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"isochromat weight must be > 0, got {self.weight}")
        if not self.b1_scale > 0:
            raise ValueError(f"b1_scale must be > 0, got {self.b1_scale}")

    def total_offset(self, gradient: "GradientSpec", gamma: float = GAMMA_1H) -> float:
        return self.delta_omega + gradient.omega(self.z, gamma)


@dataclass(frozen=True)
class OffsetDistribution:
    """Distribution of intrinsic resonance offsets (rad/s).

    ``kind`` is one of ``delta`` (every isochromat at ``center``), ``uniform``
    (flat on ``center +- width``), ``gaussian`` (standard deviation ``width``)
    or ``lorentzian`` (half width at half maximum ``width``).
    """

    kind: str = "delta"
    width: float = 0.0
    center: float = 0.0

    def __post_init__(self):
        if self.kind not in OFFSET_KINDS:
            raise ValueError(f"unknown offset distribution {self.kind!r}; expected one of {OFFSET_KINDS}")
        if self.kind != "delta" and not self.width > 0:
            raise ValueError(f"{self.kind} offset distribution needs width > 0, got {self.width}")

    def ppf(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.kind == "delta":
            return np.full_like(u, self.center)
        if self.kind == "uniform":
            return self.center + self.width * (2.0 * u - 1.0)
        if self.kind == "gaussian":
            return self.center + self.width * stats.norm.ppf(u)
        return self.center + self.width * np.tan(np.pi * (u - 0.5))


def _as_time(value) -> float:
    """None means 'infinitely long'."""
    if value is None:
        return math.inf
    value = float(value)
    if math.isnan(value) or value <= 0:
        raise ValueError(f"relaxation times must be > 0, got {value}")
    return value


@dataclass(frozen=True)
class SampleSpec:
    """Sample description used to draw an isochromat ensemble.

    Parameters
    ----------
    n_isochromats : int
        Number of isochromats drawn.
    offsets : OffsetDistribution
        Intrinsic offset distribution (rad/s).
    z_range : (float, float)
        Sample extent along the gradient axis in cm; positions are uniform.
    b1_profile : tuple of float
        Polynomial coefficients of the flip-angle scale in ascending powers of
        z, ``eps(z) = c0 + c1*z + c2*z**2 + ...``.
    b1_sigma : float
        Relative Gaussian spread of the flip-angle scale on top of the
        profile (0 disables it).
    t1, t2 : float or None
        Relaxation times in seconds; ``None`` means infinite.
    gamma : float
        Gyromagnetic ratio in rad/(s*G).
    """

    n_isochromats: int = 10_000
    offsets: OffsetDistribution = field(default_factory=OffsetDistribution)
    z_range: tuple[float, float] = (-0.25, 0.25)
    b1_profile: tuple[float, ...] = (1.0,)
    b1_sigma: float = 0.0
    t1: float | None = None
    t2: float | None = None
    gamma: float = GAMMA_1H

    def __post_init__(self):
        if int(self.n_isochromats) < 1:
            raise ValueError("n_isochromats must be >= 1")
        object.__setattr__(self, "n_isochromats", int(self.n_isochromats))
        object.__setattr__(self, "z_range", tuple(float(v) for v in self.z_range))
        object.__setattr__(self, "b1_profile", tuple(float(c) for c in self.b1_profile))
        if len(self.z_range) != 2 or self.z_range[0] > self.z_range[1]:
            raise ValueError(f"z_range must be (z_min, z_max) with z_min <= z_max, got {self.z_range}")
        if not self.b1_profile:
            raise ValueError("b1_profile needs at least one coefficient")
        if self.b1_sigma < 0:
            raise ValueError("b1_sigma must be >= 0")
        t1, t2 = _as_time(self.t1), _as_time(self.t2)
        if t1 < t2 / 2:
            raise ValueError(f"unphysical relaxation: need t1 >= t2/2, got t1={t1}, t2={t2}")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")

    @property
    def t1_s(self) -> float:
        return _as_time(self.t1)

    @property
    def t2_s(self) -> float:
        return _as_time(self.t2)

    def b1_scale_at(self, z) -> np.ndarray:
        return np.polynomial.polynomial.polyval(np.asarray(z, dtype=float), self.b1_profile)


@dataclass(frozen=True)
class GradientSpec:
    """Static field gradient along z, in G/cm."""

    g: float = 0.0

    def __post_init__(self):
        if not self.g >= 0:
            raise ValueError(f"gradient strength must be >= 0 (sign goes into z), got {self.g}")

    def omega(self, z, gamma: float = GAMMA_1H):
        return gamma * self.g * z


def rotation_matrix(phase: float, angle: float) -> np.ndarray:
    """Right-handed rotation by ``angle`` about ``(cos phase, sin phase, 0)``."""
    nx, ny = math.cos(phase), math.sin(phase)
    c, s = math.cos(angle), math.sin(angle)
    k = 1.0 - c
    return np.array([
        [c + nx * nx * k, nx * ny * k, ny * s],
        [nx * ny * k, c + ny * ny * k, -nx * s],
        [-ny * s, nx * s, c],
    ])


def rotate(m: Magnetization, axis_phase: float, angle: float) -> Magnetization:
    """Apply an instantaneous RF pulse of flip ``angle`` and phase ``axis_phase``."""
    if not math.isfinite(angle):
        raise ValueError("rotation angle must be finite")
    return Magnetization.from_array(rotation_matrix(axis_phase, angle) @ m.as_array())


def free_evolve(m: Magnetization, omega_total: float, t: float,
                t1: float | None = None, t2: float | None = None) -> Magnetization:
    """Precess about z for time ``t`` and relax toward (0, 0, 1).

    Examples
    --------
    >>> free_evolve(Magnetization(1, 0, 0), math.pi / 2, 1.0).my
    1.0
    """
    if t < 0:
        raise ValueError(f"evolution time must be >= 0, got {t}")
    e2 = math.exp(-t / _as_time(t2))
    e1 = math.exp(-t / _as_time(t1))
    mt = m.transverse * complex(math.cos(omega_total * t), math.sin(omega_total * t)) * e2
    return Magnetization(mt.real, mt.imag, m.mz * e1 + (1.0 - e1))
