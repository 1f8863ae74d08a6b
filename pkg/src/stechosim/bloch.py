"""Isochromat-ensemble simulator.

Every isochromat is stepped through the program in closed form: pulses are
rotations, delays are a z-rotation plus exponential relaxation.  Nothing is
integrated numerically, so there is no step-size error.

The ensemble is split into fixed-size chunks.  Chunks may run on a thread
pool, but their partial signals are always summed in chunk order, which makes
the result bit-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import GradientSpec, Isochromat, Magnetization, OffsetDistribution, SampleSpec
from .seqlang import Acquire, Delay, Pulse, PulseProgram, parse_program, format_duration

DEFAULT_CHUNK = 8192
_SAMPLE_BLOCK = 256


class NoAcquisition(ValueError):
    pass


# --------------------------------------------------------------------------
# ensemble
# --------------------------------------------------------------------------

def _stratified(rng: np.random.Generator, n: int) -> np.ndarray:
    # one jittered point per stratum, strata visited in random order
    return (rng.permutation(n) + rng.random(n)) / n


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Weighted isochromat collection stored as parallel arrays."""

    z: np.ndarray
    delta_omega: np.ndarray
    b1_scale: np.ndarray
    weight: np.ndarray
    sample: SampleSpec = field(default_factory=SampleSpec)
    rng_seed: int | None = None

    def __post_init__(self):
        arrays = [np.ascontiguousarray(a, dtype=float) for a in
                  (self.z, self.delta_omega, self.b1_scale, self.weight)]
        n = arrays[0].shape
        if any(a.shape != n or a.ndim != 1 for a in arrays):
            raise ValueError("ensemble arrays must be 1-D and of equal length")
        if np.any(arrays[3] <= 0):
            raise ValueError("isochromat weights must be > 0")
        if np.any(arrays[2] <= 0):
            raise ValueError("flip-angle scales must be > 0")
        if abs(math.fsum(arrays[3]) - 1.0) > 1e-12:
            raise ValueError("isochromat weights must sum to 1")
        for name, a in zip(("z", "delta_omega", "b1_scale", "weight"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_spec(cls, sample: SampleSpec, seed: int = 0) -> "Ensemble":
        """Draw positions, offsets and flip-angle scales (Latin hypercube)."""
        n = sample.n_isochromats
        rng = np.random.default_rng(seed)
        u_z, u_off, u_b1 = (_stratified(rng, n) for _ in range(3))
        z0, z1 = sample.z_range
        z = z0 + (z1 - z0) * u_z
        offsets = sample.offsets.ppf(u_off)
        eps = sample.b1_scale_at(z)
        if sample.b1_sigma > 0:
            eps = eps * (1.0 + sample.b1_sigma * stats.norm.ppf(u_b1))
        weight = np.full(n, 1.0 / n)
        return cls(z, offsets, eps, weight, sample, seed)

    @classmethod
    def from_isochromats(cls, isochromats, sample: SampleSpec | None = None) -> "Ensemble":
        isos = list(isochromats)
        w = np.array([i.weight for i in isos], dtype=float)
        return cls(np.array([i.z for i in isos]), np.array([i.delta_omega for i in isos]),
                   np.array([i.b1_scale for i in isos]), w / w.sum(),
                   sample or SampleSpec(n_isochromats=len(isos)))

    @property
    def isochromats(self) -> list[Isochromat]:
        return [Isochromat(float(z), float(o), float(e), float(w))
                for z, o, e, w in zip(self.z, self.delta_omega, self.b1_scale, self.weight)]

    def __len__(self) -> int:
        return self.z.shape[0]

    def total_offsets(self, gradient: GradientSpec) -> np.ndarray:
        return self.delta_omega + gradient.omega(self.z, self.sample.gamma)

    def union(self, other: "Ensemble", fraction: float = 0.5) -> "Ensemble":
        """Mixture holding ``fraction`` of the weight in ``self``."""
        return Ensemble(np.concatenate([self.z, other.z]),
                        np.concatenate([self.delta_omega, other.delta_omega]),
                        np.concatenate([self.b1_scale, other.b1_scale]),
                        np.concatenate([self.weight * fraction, other.weight * (1 - fraction)]),
                        self.sample)


@dataclass(frozen=True, eq=False)
class SignalTrace:
    """Complex transverse signal ``sum_j w_j (mx_j + i my_j)`` at sample times."""

    t: np.ndarray
    s: np.ndarray

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return [(float(t), float(v.real), float(v.imag)) for t, v in zip(self.t, self.s)]

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.s)

    def __len__(self) -> int:
        return len(self.t)

    def identical(self, other: "SignalTrace") -> bool:
        return (self.t.shape == other.t.shape and np.array_equal(self.t, other.t)
                and self.s.tobytes() == other.s.tobytes())


# --------------------------------------------------------------------------
# stepping kernels
# --------------------------------------------------------------------------

def _rodrigues(mx, my, mz, nx, ny, nz, angle):
    c = np.cos(angle)
    s = np.sin(angle)
    dot = (nx * mx + ny * my + nz * mz) * (1.0 - c)
    cx = ny * mz - nz * my
    cy = nz * mx - nx * mz
    cz = nx * my - ny * mx
    return (mx * c + cx * s + nx * dot,
            my * c + cy * s + ny * dot,
            mz * c + cz * s + nz * dot)


class _Chunk:
    """State and cached propagators for one slice of the ensemble."""

    def __init__(self, omega, eps, weight, t1, t2, rf_amplitude):
        self.omega = omega
        self.eps = eps
        self.weight = weight
        self.t1 = t1
        self.t2 = t2
        self.rf = rf_amplitude
        self._phasors = {}
        self._pulse_geom = {}

    def reset(self):
        n = self.omega.shape[0]
        self.mt = np.zeros(n, dtype=complex)
        self.mz = np.ones(n)

    def phasor(self, t):
        p = self._phasors.get(t)
        if p is None:
            p = np.exp(1j * self.omega * t)
            if len(self._phasors) < 64:
                self._phasors[t] = p
        return p

    def delay(self, t):
        if t == 0:
            return
        self.mt = self.mt * self.phasor(t)
        if math.isfinite(self.t2):
            self.mt *= math.exp(-t / self.t2)
        if math.isfinite(self.t1):
            e1 = math.exp(-t / self.t1)
            self.mz = self.mz * e1 + (1.0 - e1)

    def pulse(self, angle, phase):
        mx, my, mz = self.mt.real, self.mt.imag, self.mz
        cp, sp = math.cos(phase), math.sin(phase)
        if self.rf is None:
            mx, my, mz = _rodrigues(mx, my, mz, cp, sp, 0.0, self.eps * angle)
        else:
            # hard pulse of finite length, referenced to its center: the
            # effective field is tilted by the offset, and the free precession
            # the pulse would add is taken back half before and half after
            key = angle
            geom = self._pulse_geom.get(key)
            if geom is None:
                tp = angle / self.rf
                w1 = self.eps * self.rf
                weff = np.hypot(w1, self.omega)
                geom = (w1 / weff, self.omega / weff, weff * tp, self.phasor(-0.5 * tp))
                self._pulse_geom[key] = geom
            ax, az, beta, back = geom
            m = (mx + 1j * my) * back
            mx, my, mz = _rodrigues(m.real, m.imag, mz, ax * cp, ax * sp, az, beta)
            m = (mx + 1j * my) * back
            mx, my = m.real, m.imag
        self.mt = mx + 1j * my
        self.mz = mz

    def acquire(self, acq: Acquire) -> np.ndarray:
        wm = self.weight * self.mt
        if acq.duration == 0:
            return np.array([wm.sum()])
        offs = np.array(acq.sample_offsets())
        out = np.empty(len(offs), dtype=complex)
        for b in range(0, len(offs), _SAMPLE_BLOCK):
            tb = offs[b:b + _SAMPLE_BLOCK]
            out[b:b + _SAMPLE_BLOCK] = wm @ np.exp(1j * np.outer(self.omega, tb))
        if math.isfinite(self.t2):
            out *= np.exp(-offs / self.t2)
        self.delay(acq.duration)
        return out

    def run(self, program: PulseProgram, shifts) -> np.ndarray:
        self.reset()
        samples = []
        k = 0
        for ev in program.events:
            if isinstance(ev, Pulse):
                self.pulse(ev.angle, ev.phase + shifts[k])
                k += 1
            elif isinstance(ev, Delay):
                self.delay(ev.duration)
            else:
                samples.append(self.acquire(ev))
        return np.concatenate(samples) if samples else np.zeros(0, dtype=complex)


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------

def run(program: PulseProgram, ensemble: Ensemble, gradient: GradientSpec | None = None, *,
        rf_amplitude: float | None = None, workers: int = 1,
        chunk_size: int = DEFAULT_CHUNK) -> SignalTrace:
    """Apply ``program`` to every isochromat and record the summed signal.

    Parameters
    ----------
    program : PulseProgram
        Compiled program; an attached phase cycle is executed step by step
        and the steps are averaged with their receiver phases.
    ensemble : Ensemble
    gradient : GradientSpec, optional
        Adds ``gamma * g * z`` to every offset.
    rf_amplitude : float, optional
        Nutation rate of a nominal pulse in rad/s.  ``None`` (default) gives
        ideal delta pulses.  When set, pulses act as hard pulses of length
        ``angle / rf_amplitude`` centered on their event time, so off-resonant
        isochromats see a tilted effective axis.
    workers : int
        Threads used for chunks; does not change the result.
    chunk_size : int
        Reduction granularity; part of the numerical definition of the result.
    """
    gradient = gradient or GradientSpec()
    if rf_amplitude is not None and not rf_amplitude > 0:
        raise ValueError("rf_amplitude must be > 0")
    omega = ensemble.total_offsets(gradient)
    times = np.array(program.sample_times())
    n_pulses = len(program.pulses)
    steps = program.phase_cycle or ()
    if steps:
        cycle = [(tuple(math.radians(p) for p in st.pulse_shifts), math.radians(st.receiver_deg))
                 for st in steps]
    else:
        cycle = [((0.0,) * n_pulses, 0.0)]

    t1, t2 = ensemble.sample.t1_s, ensemble.sample.t2_s
    bounds = [(i, min(i + chunk_size, len(ensemble))) for i in range(0, len(ensemble), chunk_size)]

    def work(bound):
        a, b = bound
        chunk = _Chunk(omega[a:b], ensemble.b1_scale[a:b], ensemble.weight[a:b], t1, t2, rf_amplitude)
        acc = np.zeros(len(times), dtype=complex)
        for shifts, receiver in cycle:
            acc = acc + chunk.run(program, shifts) * complex(math.cos(receiver), -math.sin(receiver))
        return acc

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(work, bounds))
    else:
        partials = [work(b) for b in bounds]
    total = np.zeros(len(times), dtype=complex)
    for p in partials:
        total = total + p
    return SignalTrace(times, total / len(cycle))


@dataclass(frozen=True)
class EchoEntry:
    index: int
    t: float
    amplitude: complex


@dataclass(frozen=True, eq=False)
class EchoTrain:
    """Echo-top samples of a train, indexed from 1."""

    entries: tuple[EchoEntry, ...]
    tau: float | None = None
    sequence: str | None = None

    def __post_init__(self):
        ts = [e.t for e in self.entries]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("echo times must be strictly increasing")

    @classmethod
    def from_arrays(cls, t, amplitude, tau=None, sequence=None) -> "EchoTrain":
        return cls(tuple(EchoEntry(k + 1, float(ti), complex(a))
                         for k, (ti, a) in enumerate(zip(t, amplitude))), tau, sequence)

    @property
    def t(self) -> np.ndarray:
        return np.array([e.t for e in self.entries])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([e.amplitude for e in self.entries])

    @property
    def magnitudes(self) -> np.ndarray:
        return np.abs(self.amplitudes)

    def __len__(self) -> int:
        return len(self.entries)


def echo_tops(program: PulseProgram, trace: SignalTrace) -> EchoTrain:
    """Pick one sample per acquisition: the only one, or the window center."""
    acqs = program.acquisitions
    if not acqs:
        raise NoAcquisition("program has no acquire events")
    ts, amps = [], []
    pos = 0
    for a in acqs:
        n = a.n_samples
        k = 0 if n == 1 else int(np.argmin(np.abs(np.array(a.sample_offsets()) - a.duration / 2)))
        ts.append(trace.t[pos + k])
        amps.append(trace.s[pos + k])
        pos += n
    return EchoTrain.from_arrays(ts, amps, program.tau, program.name)


def echo_amplitudes(program: PulseProgram, ensemble: Ensemble, gradient: GradientSpec | None = None,
                    **run_kw) -> EchoTrain:
    """Run a train and return the raw complex echo-top amplitudes."""
    if not program.acquisitions:
        raise NoAcquisition("program has no acquire events")
    return echo_tops(program, run(program, ensemble, gradient, **run_kw))


def fid(ensemble: Ensemble, gradient: GradientSpec | None = None, *, duration: float = 5e-3,
        dwell: float = 1e-5, **run_kw) -> SignalTrace:
    """(pi/2)_x followed by one acquisition window starting at t = 0."""
    prog = parse_program(f"p(90,x) acq({format_duration(duration)},{format_duration(dwell)})")
    return run(prog, ensemble, gradient, **run_kw)


def single_isochromat(delta_omega: float = 0.0, b1_scale: float = 1.0,
                      t1: float | None = None, t2: float | None = None) -> Ensemble:
    spec = SampleSpec(n_isochromats=1, offsets=OffsetDistribution("delta", center=delta_omega),
                      b1_profile=(b1_scale,), t1=t1, t2=t2)
    return Ensemble.from_spec(spec)


def final_magnetization(program: PulseProgram, isochromat: Isochromat, gradient: GradientSpec | None = None,
                        t1=None, t2=None, gamma=None) -> Magnetization:
    """Magnetization of one isochromat at the end of ``program`` (no phase cycle)."""
    gradient = gradient or GradientSpec()
    spec = SampleSpec(n_isochromats=1, t1=t1, t2=t2, **({"gamma": gamma} if gamma else {}))
    omega = np.array([isochromat.total_offset(gradient, spec.gamma)])
    chunk = _Chunk(omega, np.array([isochromat.b1_scale]), np.ones(1), spec.t1_s, spec.t2_s, None)
    chunk.reset()
    chunk.mt = np.array([isochromat.m.transverse])
    chunk.mz = np.array([isochromat.m.mz])
    for ev in program.events:
        if isinstance(ev, Pulse):
            chunk.pulse(ev.angle, ev.phase)
        else:
            chunk.delay(ev.duration)
    return Magnetization(float(chunk.mt[0].real), float(chunk.mt[0].imag), float(chunk.mz[0]))
