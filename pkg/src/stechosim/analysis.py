"""Figures of merit extracted from simulated signals.

Echo-train decays are described by a short component with a fixed time
constant plus a free long tail,

    |M(t)| = A_s exp(-t / t_short) + A_l exp(-t / t_l),

and the tail fraction is ``A_l / A_s``.  Three-pulse traces are reduced to a
stimulated-to-Hahn echo ratio, and ratios measured over a gradient sweep are
fitted with ``a G**2 + b``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import nnls

from .bloch import EchoEntry, EchoTrain, SignalTrace

__all__ = [
    "EchoEntry", "EchoTrain", "FitResult", "FitDidNotConverge", "DegenerateDesign",
    "EchoWindowsOverlap", "NonMonotoneDecay", "EchoRatio", "QuadraticFit",
    "fit_double_exponential", "fit_single_exponential", "ste_he_ratio",
    "fit_quadratic_gradient", "measure_t2star", "measure_t2he", "effective_dipolar",
    "FIT_SCHEMA_VERSION",
]

FIT_SCHEMA_VERSION = 1

#: a tail is significant when A_l exceeds this many tail-window residual RMS
NOISE_FLOOR_FACTOR = 5.0
#: ... and this fraction of the largest echo (guards exactly noiseless data)
NOISE_FLOOR_RELATIVE = 1e-9
#: a long component closer than this factor to t_short is not a separate tail
TAIL_SEPARATION = 2.0


class FitDidNotConverge(RuntimeError):
    pass


class DegenerateDesign(ValueError):
    pass


class EchoWindowsOverlap(ValueError):
    pass


class NonMonotoneDecay(UserWarning):
    pass


# --------------------------------------------------------------------------
# exponential fits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    """Double-exponential decay parameters.

    Attributes
    ----------
    a_s, a_l : float
        Short and long amplitudes (same units as the data).
    t_short : float
        The fixed short time constant.
    t_l : float
        Fitted long time constant (``inf`` for a flat tail).
    residual_rms : float
        RMS residual of the full fit.
    covariance : list of list of float
        Covariance of ``(a_s, a_l, t_l)`` estimated from the residual variance.
    a_l_tail, t_l_tail, tail_rms : float
        Single-exponential fit restricted to ``t > 3 t_short`` and its RMS
        residual (``nan`` when the window holds fewer than three echoes).
    status : str
        ``"ok"``; ``"tail_absent"`` when ``a_l`` is below the noise floor;
        ``"unresolved"`` when ``t_l < TAIL_SEPARATION * t_short``, i.e. the
        data hold one decay slightly off ``t_short`` rather than a separate
        slow component.  The amplitudes are then not a short/long split and
        ``tail_fraction`` is ``nan``.
    """

    a_s: float
    a_l: float
    t_short: float
    t_l: float
    residual_rms: float
    covariance: list = field(default_factory=list)
    a_l_tail: float = math.nan
    t_l_tail: float = math.nan
    tail_rms: float = math.nan
    noise_floor: float = 0.0
    n_points: int = 0
    iterations: int = 0
    status: str = "ok"

    @property
    def tail_absent(self) -> bool:
        return self.status == "tail_absent"

    @property
    def resolved(self) -> bool:
        return self.status != "unresolved"

    @property
    def tail_fraction(self) -> float:
        if self.status == "unresolved":
            return math.nan
        if self.a_s == 0:
            return math.inf if self.a_l > 0 else 0.0
        return self.a_l / self.a_s

    @property
    def tail_pct(self) -> float:
        return 100.0 * self.tail_fraction

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = FIT_SCHEMA_VERSION
        d["tail_fraction"] = self.tail_fraction
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        version = d.get("schema_version")
        if version != FIT_SCHEMA_VERSION:
            raise ValueError(f"unsupported fit schema_version {version!r}")
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_json(self) -> str:
        # inf/nan are not JSON; encode them as strings and decode in from_json
        return json.dumps(_encode_nonfinite(self.to_dict()), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(_decode_nonfinite(json.loads(text)))


def _encode_nonfinite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)  # 'inf', '-inf', 'nan'
    if isinstance(obj, dict):
        return {k: _encode_nonfinite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_encode_nonfinite(v) for v in obj]
    return obj


def _decode_nonfinite(obj):
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _decode_nonfinite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_nonfinite(v) for v in obj]
    return obj


def _as_decay(train_or_t, y=None) -> tuple[np.ndarray, np.ndarray]:
    if y is None:
        train = train_or_t
        t, y = train.t, train.magnitudes
    else:
        t, y = np.asarray(train_or_t, float), np.abs(np.asarray(y))
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and amplitudes must be 1-d arrays of equal length")
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
        raise ValueError("decay data must be finite")
    return t, y


def _gauss_newton(residual, jacobian, p0, lower, upper, max_iter=500):
    """Bound-projected Gauss-Newton with Levenberg damping and backtracking.

    Returns ``(p, cost, iterations, converged)``.
    """
    p = np.clip(np.asarray(p0, float), lower, upper)
    r = residual(p)
    cost = float(r @ r)
    lam = 1e-6
    for it in range(1, max_iter + 1):
        J = jacobian(p)
        g = J.T @ r
        scale = np.sqrt(np.sum(J * J, axis=0))
        scale[scale == 0] = 1.0
        Js = J / scale
        A = Js.T @ Js
        # active bounds: drop variables pushed against them
        free = ~(((p <= lower) & (g > 0)) | ((p >= upper) & (g < 0)))
        if not free.any() or np.max(np.abs(g[free] / scale[free])) <= 1e-15 * max(1.0, math.sqrt(cost)):
            return p, cost, it, True
        accepted = False
        while lam < 1e12:
            step = np.zeros_like(p)
            Af = A[np.ix_(free, free)] + lam * np.eye(free.sum())
            step[free] = -np.linalg.solve(Af, (g / scale)[free]) / scale[free]
            trial = np.clip(p + step, lower, upper)
            rt = residual(trial)
            ct = float(rt @ rt)
            if ct < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at machine precision
            return p, cost, it, True
        rel_step = np.max(np.abs(trial - p) / np.maximum(np.abs(p), 1e-300))
        rel_drop = (cost - ct) / max(cost, 1e-300)
        p, r, cost = trial, rt, ct
        lam = max(lam / 10.0, 1e-12)
        if rel_step < 1e-13 or rel_drop < 1e-15 or cost == 0.0:
            return p, cost, it, True
    return p, cost, max_iter, False


def fit_single_exponential(t, y) -> tuple[float, float, float]:
    """Least-squares ``A exp(-t/T)``; returns ``(A, T, rms)``.

    A non-decaying series gives ``T = inf``.
    """
    t, y = _as_decay(t, y)
    if len(t) < 2:
        raise ValueError("need at least two points")
    pos = y > 0
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(t[pos], np.log(y[pos]), 1)
        k0, a0 = max(-slope, 0.0), math.exp(icpt)
    else:
        k0, a0 = 0.0, float(np.max(y))

    def res(p):
        return p[0] * np.exp(-p[1] * t) - y

    def jac(p):
        e = np.exp(-p[1] * t)
        return np.column_stack([e, -p[0] * t * e])

    p, cost, _, _ = _gauss_newton(res, jac, [a0, k0], np.array([0.0, 0.0]), np.array([np.inf, np.inf]))
    rms = math.sqrt(cost / len(t))
    return float(p[0]), (math.inf if p[1] == 0 else 1.0 / float(p[1])), rms


def fit_double_exponential(train, t_short_fixed: float, y=None) -> FitResult:
    """Fit ``A_s exp(-t/t_short) + A_l exp(-t/t_l)`` with ``t_short`` fixed.

    Parameters
    ----------
    train : EchoTrain or array_like
        Echo train (magnitudes are fitted), or echo times when ``y`` is given.
    t_short_fixed : float
        The short time constant, normally the Hahn-echo T2.
    y : array_like, optional
        Echo amplitudes (complex values are reduced to magnitudes).

    Returns
    -------
    FitResult
        ``status == "tail_absent"`` when ``a_l`` does not clear the noise
        floor and ``"unresolved"`` when the free component is too close to
        ``t_short`` to count as a tail; both are outcomes, not errors.

    Raises
    ------
    FitDidNotConverge
        If Gauss-Newton exhausts its iteration budget.

    Notes
    -----
    ``t_l`` is parametrized by its rate ``1/t_l`` in ``[0, 1/t_short]`` so
    that a flat tail (``t_l = inf``) is reachable and ``t_l >= t_short``.
    Initial guesses come from the first echo and the log-slope of the last
    third of the train; a coarse variable-projection scan over the rate
    guards against starting in the wrong basin.
    """
    t, y = _as_decay(train, y)
    if len(t) < 6:
        raise ValueError(f"need at least 6 echoes, got {len(t)}")
    ts = float(t_short_fixed)
    if not ts > 0:
        raise ValueError("t_short_fixed must be > 0")
    es = np.exp(-t / ts)
    kmax = 1.0 / ts

    # initial guess
    third = t >= t[len(t) - max(len(t) // 3, 2)]
    pos = third & (y > 0)
    if pos.sum() >= 2:
        slope, icpt = np.polyfit(t[pos], np.log(y[pos]), 1)
        k0 = min(max(-slope, 0.0), kmax)
        al0 = min(math.exp(icpt), float(np.max(y)))
    else:
        k0, al0 = 0.0, 0.0
    as0 = max((y[0] - al0 * math.exp(-k0 * t[0])) / es[0], 0.0)

    def res(p):
        return p[0] * es + p[1] * np.exp(-p[2] * t) - y

    def jac(p):
        el = np.exp(-p[2] * t)
        return np.column_stack([es, el, -p[1] * t * el])

    lower = np.array([0.0, 0.0, 0.0])
    upper = np.array([np.inf, np.inf, kmax])
    p, cost, iters, ok = _gauss_newton(res, jac, [as0, al0, k0], lower, upper)

    # variable-projection scan: amplitudes by NNLS on a grid of rates
    span = max(t[-1], ts)
    grid = np.concatenate([[0.0], np.geomspace(1e-3 / span, kmax, 120)])
    best = None
    for k in grid:
        amps, rn = nnls(np.column_stack([es, np.exp(-k * t)]), y)
        if best is None or rn * rn < best[0]:
            best = (rn * rn, amps[0], amps[1], k)
    if best[0] < cost * (1 - 1e-9):
        p2, cost2, it2, ok2 = _gauss_newton(res, jac, best[1:], lower, upper)
        iters += it2
        if cost2 <= cost:
            p, cost, ok = p2, cost2, ok2
    if not ok or not np.all(np.isfinite(p)):
        raise FitDidNotConverge(f"double-exponential fit did not converge after {iters} iterations")

    a_s, a_l, k = (float(v) for v in p)
    t_l = math.inf if k == 0 else 1.0 / k
    n = len(t)
    rms = math.sqrt(cost / n)

    # covariance of (a_s, a_l, t_l); singular designs give nan entries
    J = jac(p)
    J[:, 2] = J[:, 2] * (-k * k)  # d/dt_l = d/dk * dk/dt_l
    dof = max(n - 3, 1)
    try:
        cov = np.linalg.inv(J.T @ J) * (cost / dof)
    except np.linalg.LinAlgError:
        cov = np.full((3, 3), np.nan)

    # tail-only window
    w = t > 3 * ts
    if w.sum() >= 3:
        a_l_tail, t_l_tail, tail_rms = fit_single_exponential(t[w], y[w])
        floor_rms = tail_rms
    else:
        a_l_tail = t_l_tail = tail_rms = math.nan
        floor_rms = rms
    floor = max(NOISE_FLOOR_FACTOR * floor_rms, NOISE_FLOOR_RELATIVE * float(np.max(y)))
    if not a_l > floor:
        status = "tail_absent"
    elif t_l < TAIL_SEPARATION * ts:
        status = "unresolved"
    else:
        status = "ok"
    return FitResult(a_s, a_l, ts, t_l, rms, cov.tolist(), a_l_tail, t_l_tail, tail_rms,
                     floor, n, iters, status)


# --------------------------------------------------------------------------
# three-pulse echoes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EchoRatio:
    ste_amp: float
    he_amp: float
    ratio: float
    #: phase of the stimulated echo relative to the Hahn echo, radians
    relative_phase: float
    #: +1 or -1: sign of Re(ste * conj(he)), i.e. in phase or inverted
    phase_sign: int


def _peak(trace: SignalTrace, center: float, half: float) -> complex:
    t = np.asarray(trace.t)
    sel = np.abs(t - center) <= half + 1e-15
    if not sel.any():
        sel = np.zeros(len(t), bool)
        sel[int(np.argmin(np.abs(t - center)))] = True
    idx = np.flatnonzero(sel)
    return complex(trace.s[idx[int(np.argmax(np.abs(trace.s[idx])))]])


def ste_he_ratio(trace: SignalTrace, tau: float, t1: float, *, window: float | None = None,
                 he_trace: SignalTrace | None = None) -> EchoRatio:
    """Stimulated-echo and Hahn-echo amplitudes of a three-pulse experiment.

    The stimulated echo is expected ``tau`` after the last pulse and the Hahn
    echo ``t1 - tau`` after it; with the first pulse at 0 those are the
    absolute times ``t1 + 2 tau`` and ``2 t1``.

    Parameters
    ----------
    trace : SignalTrace
    tau, t1 : float
        Sequence delays in seconds.
    window : float, optional
        Full width of each search window; defaults to ``tau``.  The peak
        ``|s|`` inside the window is taken; a window holding no sample falls
        back to the nearest sample.
    he_trace : SignalTrace, optional
        Read the Hahn echo from this trace instead (e.g. a separately
        phase-cycled run).

    Raises
    ------
    EchoWindowsOverlap
        If the two echoes are closer than ``window``.
    """
    if not (tau > 0 and t1 >= 0):
        raise ValueError("need tau > 0 and t1 >= 0")
    window = tau if window is None else float(window)
    if abs(t1 - 2 * tau) < window:
        raise EchoWindowsOverlap(
            f"echoes {abs(t1 - 2 * tau):g} s apart, closer than the {window:g} s window")
    ste = _peak(trace, t1 + 2 * tau, window / 2)
    he = _peak(he_trace if he_trace is not None else trace, 2 * t1, window / 2)
    ste_amp, he_amp = abs(ste), abs(he)
    ratio = ste_amp / he_amp if he_amp > 0 else math.inf
    rel = float(np.angle(ste * np.conj(he))) if ste_amp > 0 and he_amp > 0 else 0.0
    sign = 1 if (ste * np.conj(he)).real >= 0 else -1
    return EchoRatio(ste_amp, he_amp, ratio, rel, sign)


@dataclass(frozen=True)
class QuadraticFit:
    a: float
    b: float
    r_squared: float


def fit_quadratic_gradient(points) -> QuadraticFit:
    """Least-squares ``ratio = a G**2 + b`` over ``(G, ratio)`` pairs."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be a sequence of (G, ratio) pairs")
    if len(pts) < 4:
        raise ValueError(f"need at least 4 gradient values, got {len(pts)}")
    g, r = pts[:, 0], pts[:, 1]
    if len(np.unique(g * g)) < 3:
        raise DegenerateDesign("need at least 3 distinct gradient strengths")
    X = np.column_stack([g * g, np.ones_like(g)])
    (a, b), *_ = np.linalg.lstsq(X, r, rcond=None)
    resid = r - X @ np.array([a, b])
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((r - r.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return QuadraticFit(float(a), float(b), r2)


# --------------------------------------------------------------------------
# relaxation times
# --------------------------------------------------------------------------

def measure_t2star(trace: SignalTrace) -> float:
    """Time at which the FID envelope falls to 1/e of its first sample.

    The envelope is the running maximum of ``|s|`` taken from the end, so
    ripples (e.g. sinc zeros) do not produce early crossings.  A
    ``NonMonotoneDecay`` warning is issued when ``|s|`` itself is not
    monotone.
    """
    t = np.asarray(trace.t, float)
    m = np.abs(np.asarray(trace.s))
    if len(t) < 2:
        raise ValueError("need at least two samples")
    if np.any(np.diff(m) > 1e-12 * m[0]):
        warnings.warn("signal magnitude is not monotone; using its upper envelope",
                      NonMonotoneDecay, stacklevel=2)
    env = np.maximum.accumulate(m[::-1])[::-1]
    target = m[0] / math.e
    below = np.flatnonzero(env <= target)
    if len(below) == 0:
        raise ValueError("signal never decays to 1/e within the trace")
    i = int(below[0])
    if i == 0:
        return float(t[0])
    # log-linear interpolation between the bracketing samples
    y0, y1 = env[i - 1], env[i]
    if y1 <= 0:
        frac = (y0 - target) / (y0 - y1)
    else:
        frac = math.log(y0 / target) / math.log(y0 / y1)
    return float(t[i - 1] + frac * (t[i] - t[i - 1]))


def measure_t2he(tau_sweep) -> float:
    """T2 from a Hahn-echo sweep given as ``(2 tau, amplitude)`` pairs."""
    pts = np.asarray(tau_sweep, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("tau_sweep must hold at least two (2tau, amplitude) pairs")
    order = np.argsort(pts[:, 0])
    x, y = pts[order, 0], np.abs(pts[order, 1])
    if np.any(np.diff(y) > 1e-12 * y[0]):
        warnings.warn("Hahn-echo amplitudes are not monotone", NonMonotoneDecay, stacklevel=2)
    _, t2, _ = fit_single_exponential(x, y)
    return t2


def effective_dipolar(d: float, tau: float) -> float:
    """Exchange-narrowed dipolar strength ``d**2 * tau`` (rad/s)."""
    if d < 0 or not tau > 0:
        raise ValueError("need d >= 0 and tau > 0")
    return d * d * tau
