"""Pulse-program mini-language.

Grammar (EBNF)::

    program  = { item } ;
    item     = pulse | delay | acquire | block ;
    pulse    = "p" "(" number "," phase ")" ;           (* angle in degrees *)
    phase    = atom | "{" atom { "," atom } "}" ;       (* list cycles per iteration *)
    atom     = "x" | "y" | "-x" | "-y" | "+x" | "+y" | number ;   (* number = degrees *)
    delay    = "d" "(" duration ")" ;
    acquire  = "acq" "(" duration [ "," duration ] ")" ;  (* window, dwell *)
    block    = "[" { item } "]" "*" integer ;
    duration = number unit ;   unit = "s" | "ms" | "us" | "µs" ;

``#`` starts a comment that runs to the end of the line.  A zero-length
acquisition ``acq(0s)`` records a single complex sample; a window
``acq(T, dt)`` records samples at ``start + k*dt`` for ``k = 0..round(T/dt)``.
A phase list inside a block picks element ``i % len`` on iteration ``i`` of
the innermost enclosing block; outside any block the first element is used.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Union


class ProgramSyntaxError(SyntaxError):
    """Malformed program text; carries 1-based line and column."""

    def __init__(self, msg: str, line: int, col: int, text: str | None = None):
        super().__init__(f"{msg} (line {line}, column {col})", ("<program>", line, col, text))
        self.line = line
        self.col = col


class ValidationError(ValueError):
    pass


class UnknownPhaseError(ValidationError):
    pass


class UnknownBuiltin(KeyError):
    pass


PHASE_LABELS = {"x": 0.0, "+x": 0.0, "y": 90.0, "+y": 90.0, "-x": 180.0, "-y": 270.0}
_CANONICAL_PHASE = {0.0: "x", 90.0: "y", 180.0: "-x", 270.0: "-y"}
UNITS = {"s": 1.0, "ms": 1e3, "us": 1e6, "µs": 1e6}


# --------------------------------------------------------------------------
# events and programs
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Pulse:
    angle_deg: float
    phase_deg: float
    start: float = 0.0

    duration = 0.0

    @property
    def angle(self) -> float:
        return math.radians(self.angle_deg)

    @property
    def phase(self) -> float:
        return math.radians(self.phase_deg)


@dataclass(frozen=True)
class Delay:
    duration: float
    start: float = 0.0


@dataclass(frozen=True)
class Acquire:
    duration: float
    dwell: float = 0.0
    start: float = 0.0

    @property
    def n_samples(self) -> int:
        if self.duration == 0:
            return 1
        # samples never run past the window; the tolerance absorbs rounding
        # when the window is an exact multiple of the dwell time
        return int(math.floor(self.duration / self.dwell * (1 + 1e-9))) + 1

    def sample_offsets(self) -> list[float]:
        """Sample times relative to the window start."""
        return [k * self.dwell for k in range(self.n_samples)]


PulseEvent = Union[Pulse, Delay, Acquire]


@dataclass(frozen=True)
class CycleStep:
    """One step of a phase cycle: per-pulse phase shifts and a receiver phase (degrees)."""

    pulse_shifts: tuple[float, ...]
    receiver_deg: float = 0.0


@dataclass(frozen=True)
class PulseProgram:
    """Compiled, time-ordered event list.

    Only ``events`` and ``phase_cycle`` take part in equality; the rest is
    descriptive metadata.
    """

    events: tuple[PulseEvent, ...]
    phase_cycle: tuple[CycleStep, ...] | None = None
    source: str = field(default="", compare=False)
    name: str | None = field(default=None, compare=False)
    cycle_length: int = field(default=1, compare=False)
    tau: float | None = field(default=None, compare=False)
    t1: float | None = field(default=None, compare=False)

    @property
    def total_duration(self) -> float:
        if not self.events:
            return 0.0
        last = self.events[-1]
        return last.start + last.duration

    @property
    def pulses(self) -> list[Pulse]:
        return [e for e in self.events if isinstance(e, Pulse)]

    @property
    def acquisitions(self) -> list[Acquire]:
        return [e for e in self.events if isinstance(e, Acquire)]

    def sample_times(self) -> list[float]:
        return [a.start + dt for a in self.acquisitions for dt in a.sample_offsets()]

    def with_phase_cycle(self, steps: Iterable[CycleStep]) -> "PulseProgram":
        steps = tuple(steps)
        n = len(self.pulses)
        for s in steps:
            if len(s.pulse_shifts) != n:
                raise ValidationError(f"cycle step has {len(s.pulse_shifts)} shifts for {n} pulses")
        return replace(self, phase_cycle=steps or None)


def compile_events(raw: Iterable[PulseEvent]) -> tuple[PulseEvent, ...]:
    """Validate durations and assign start times."""
    out = []
    t = 0.0
    for ev in raw:
        if isinstance(ev, Delay):
            if not math.isfinite(ev.duration) or ev.duration < 0:
                raise ValidationError(f"delay duration must be >= 0, got {ev.duration}")
        elif isinstance(ev, Acquire):
            if not math.isfinite(ev.duration) or ev.duration < 0:
                raise ValidationError(f"acquisition duration must be >= 0, got {ev.duration}")
            if ev.duration > 0 and not ev.dwell > 0:
                raise ValidationError("acquisition window needs a dwell time > 0")
        elif isinstance(ev, Pulse):
            if not math.isfinite(ev.angle_deg) or not math.isfinite(ev.phase_deg):
                raise ValidationError("pulse angle and phase must be finite")
        else:
            raise TypeError(f"not a pulse event: {ev!r}")
        out.append(replace(ev, start=t))
        t = t + ev.duration
    return tuple(out)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)
  | (?P<name>[-+]?[A-Za-zµ_][A-Za-z0-9µ_]*)
  | (?P<sym>[(),{}\[\]*])
""", re.VERBOSE)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Tok]:
    toks = []
    line, line_start, pos = 1, 0, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ProgramSyntaxError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def _error(self, msg, tok=None):
        tok = tok or self.tok
        return ProgramSyntaxError(msg, tok.line, tok.col)

    def take(self, kind=None, text=None) -> _Tok:
        tok = self.tok
        if (kind and tok.kind != kind) or (text and tok.text != text):
            want = text or kind
            got = tok.text or "end of input"
            raise self._error(f"expected {want!r}, got {got!r}")
        self.i += 1
        return tok

    def peek_is(self, text) -> bool:
        return self.tok.text == text

    # items are kept as a light tree so that blocks can be expanded later
    def items(self, closing=None):
        out = []
        while True:
            tok = self.tok
            if tok.kind == "eof":
                if closing:
                    raise self._error(f"missing {closing!r}")
                return out
            if closing and tok.text == closing:
                return out
            out.append(self.item())

    def item(self):
        tok = self.tok
        if tok.text == "[":
            self.take(text="[")
            body = self.items(closing="]")
            self.take(text="]")
            self.take(text="*")
            count_tok = self.take(kind="number")
            try:
                count = int(count_tok.text)
            except ValueError:
                raise self._error("repetition count must be an integer", count_tok) from None
            if count < 1:
                raise ValidationError(f"repetition count must be >= 1 (line {count_tok.line})")
            return ("block", body, count)
        if tok.kind != "name":
            raise self._error(f"expected p(...), d(...), acq(...) or '[', got {tok.text or 'end of input'!r}")
        name = self.take().text
        if name == "p":
            self.take(text="(")
            angle = float(self.take(kind="number").text)
            self.take(text=",")
            phases = self.phase()
            self.take(text=")")
            return ("pulse", angle, phases)
        if name == "d":
            self.take(text="(")
            dur = self.duration()
            self.take(text=")")
            return ("delay", dur)
        if name == "acq":
            self.take(text="(")
            dur = self.duration()
            dwell = 0.0
            if self.peek_is(","):
                self.take(text=",")
                dwell = self.duration()
            self.take(text=")")
            return ("acq", dur, dwell)
        raise self._error(f"unknown instruction {name!r}", tok)

    def phase(self) -> tuple[float, ...]:
        if self.peek_is("{"):
            self.take(text="{")
            atoms = [self.phase_atom()]
            while self.peek_is(","):
                self.take(text=",")
                atoms.append(self.phase_atom())
            self.take(text="}")
            return tuple(atoms)
        return (self.phase_atom(),)

    def phase_atom(self) -> float:
        tok = self.tok
        if tok.kind == "number":
            self.take()
            return float(tok.text) % 360.0
        if tok.kind == "name":
            self.take()
            label = tok.text
        else:
            raise self._error(f"expected a phase, got {tok.text or 'end of input'!r}")
        if label not in PHASE_LABELS:
            raise UnknownPhaseError(f"unknown phase {label!r} at line {tok.line}, column {tok.col}")
        return PHASE_LABELS[label]

    def duration(self) -> float:
        num = self.take(kind="number")
        unit_tok = self.tok
        if unit_tok.kind != "name" or unit_tok.text not in UNITS:
            raise self._error(f"expected a time unit (s, ms, us) after {num.text!r}")
        self.take()
        return float(num.text) / UNITS[unit_tok.text]


def _expand(items, iteration: int | None, out: list):
    for it in items:
        kind = it[0]
        if kind == "block":
            _, body, count = it
            for k in range(count):
                _expand(body, k, out)
        elif kind == "pulse":
            _, angle, phases = it
            idx = 0 if iteration is None else iteration % len(phases)
            out.append(Pulse(angle, phases[idx]))
        elif kind == "delay":
            out.append(Delay(it[1]))
        else:
            out.append(Acquire(it[1], it[2]))
    return out


def parse_program(source: str) -> PulseProgram:
    """Parse, expand and compile program text.

    >>> prog = parse_program("p(90,x) d(1ms) p(180,y) d(1ms) acq(2ms,10us)")
    >>> len(prog.events), prog.total_duration
    (5, 0.004)
    """
    items = _Parser(source).items()
    events = compile_events(_expand(items, None, []))
    return PulseProgram(events, source=source)


# --------------------------------------------------------------------------
# printer
# --------------------------------------------------------------------------

def format_duration(seconds: float) -> str:
    """Shortest unit string that parses back to exactly ``seconds``."""
    if seconds == 0:
        return "0s"
    best = f"{seconds!r}s"
    for unit in ("us", "ms", "s"):
        scale = UNITS[unit]
        value = seconds * scale
        for text in (f"{value:.15g}", repr(value)):
            if float(text) / scale == seconds:
                cand = f"{text}{unit}"
                if len(cand) < len(best):
                    best = cand
                break
    return best


def _format_phase(deg: float) -> str:
    return _CANONICAL_PHASE.get(deg, repr(deg))


def _format_number(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(x)


def format_program(program: PulseProgram) -> str:
    """Canonical flat text form; ``parse_program(format_program(p)) == p``.

    Phase cycles are not part of the text form.
    """
    parts = []
    for ev in program.events:
        if isinstance(ev, Pulse):
            parts.append(f"p({_format_number(ev.angle_deg)},{_format_phase(ev.phase_deg)})")
        elif isinstance(ev, Delay):
            parts.append(f"d({format_duration(ev.duration)})")
        elif ev.duration == 0:
            parts.append("acq(0s)")
        else:
            parts.append(f"acq({format_duration(ev.duration)},{format_duration(ev.dwell)})")
    return " ".join(parts)


def parse_duration(text) -> float:
    """Parse ``"200us"``-style strings (numbers pass through as seconds)."""
    if isinstance(text, (int, float)):
        return float(text)
    m = re.fullmatch(r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(s|ms|us|µs)\s*", str(text))
    if not m:
        raise ValueError(f"not a duration: {text!r} (expected e.g. '200us', '1.8ms', '0.5s')")
    return float(m.group(1)) / UNITS[m.group(2)]


# --------------------------------------------------------------------------
# builtins
# --------------------------------------------------------------------------

TRAINS = {
    # name: (pi-pulse phase list per cycle, cycle length)
    "CP1": ("x", 1),
    "CP2": ("{x,-x}", 2),
    "CPMG1": ("y", 1),
    "CPMG2": ("{y,-y}", 2),
    "CPMG4": ("{y,y,-y,-y}", 4),
}
STE_FAMILY = {
    "STE": (90, "y", "y"),
    "STE_CPMG1": (180, "y", "y"),
    "STE_CPMG2": (180, "y", "-y"),
}
BUILTINS = ("HE", *STE_FAMILY, *TRAINS)


def _acq_text(window: float, dwell: float | None) -> str:
    if window == 0:
        return "acq(0s)"
    dwell = dwell if dwell else window / 20
    return f"acq({format_duration(window)},{format_duration(dwell)})"


def builtin(name: str, tau: float, t1: float | None = None, n: int = 1, *,
            window: float = 0.0, dwell: float | None = None) -> PulseProgram:
    """Build one of the standard sequences.

    ``n`` counts phase cycles: CPMG2 with ``n`` cycles has ``2n`` pi pulses,
    CPMG4 has ``4n``.  With the default ``window=0`` every echo top is sampled
    once; a positive ``window`` acquires that long, centered on each echo.
    For the three-pulse family the acquisition is centered on the stimulated
    echo (``tau`` after the last pulse) and, when ``t1 > tau``, on the
    ordinary echo (``t1 - tau`` after it).
    """
    tau = parse_duration(tau)
    if not tau > 0:
        raise ValidationError(f"tau must be > 0, got {tau}")
    if int(n) < 1:
        raise ValidationError(f"cycle count must be >= 1, got {n}")
    n = int(n)
    if window < 0 or window > 2 * tau:
        raise ValidationError("acquisition window must lie in [0, 2*tau]")
    T = format_duration
    half = window / 2
    acq = _acq_text(window, dwell)

    if name == "HE":
        src = f"p(90,x) d({T(tau)}) p(180,x) d({T(tau - half)}) {acq}"
        cycle = 1
    elif name in TRAINS:
        phases, cycle = TRAINS[name]
        if window == 0:
            src = f"p(90,x) [ d({T(tau)}) p(180,{phases}) d({T(tau)}) {acq} ]*{n * cycle}"
        else:
            # the window straddles the echo top, so the delays on either side
            # shrink by half a window and pulses stay 2*tau apart
            src = (f"p(90,x) d({T(tau)}) [ p(180,{phases}) d({T(tau - half)}) {acq} "
                   f"d({T(tau - half)}) ]*{n * cycle}")
    elif name in STE_FAMILY:
        if t1 is None:
            raise ValidationError(f"{name} needs t1")
        t1 = parse_duration(t1)
        if t1 < 0:
            raise ValidationError(f"t1 must be >= 0, got {t1}")
        angle, ph2, ph3 = STE_FAMILY[name]
        head = f"p(90,x) d({T(tau)}) p({angle},{ph2}) d({T(t1)}) p({angle},{ph3})"
        centers = sorted({tau} | ({t1 - tau} if t1 - tau > 0 else set()))
        tail, t = [], 0.0
        for c in centers:
            begin = max(c - half, t)
            end = c + half
            if end <= t:
                continue
            if begin > t:
                tail.append(f"d({T(begin - t)})")
            tail.append(_acq_text(end - begin, dwell if window else None) if window else "acq(0s)")
            t = end
        src = head + " " + " ".join(tail)
        cycle = 1
    else:
        raise UnknownBuiltin(f"unknown builtin {name!r}; expected one of {BUILTINS}")

    prog = parse_program(src)
    return replace(prog, name=name, cycle_length=cycle, tau=tau,
                   t1=t1 if name in STE_FAMILY else None)


def coherence_filter(program: PulseProgram, orders: dict[int, int], steps: int = 4) -> PulseProgram:
    """Attach a nested phase cycle that keeps one coherence-transfer pathway.

    ``orders`` maps a pulse index to the change of coherence order it must
    produce, with transverse magnetization ``mx + i*my`` counted as order
    +1 (the detected order).  Each listed pulse is cycled through ``steps``
    phases; the receiver follows so that only the requested transfers add up.
    """
    n_pulses = len(program.pulses)
    for k in orders:
        if not 0 <= k < n_pulses:
            raise ValidationError(f"pulse index {k} out of range for {n_pulses} pulses")
    keys = sorted(orders)
    cycle = []
    for flat in range(steps ** len(keys)):
        shifts = [0.0] * n_pulses
        receiver = 0.0
        rem = flat
        for k in keys:
            m, rem = rem % steps, rem // steps
            phi = 360.0 * m / steps
            shifts[k] = phi
            receiver += orders[k] * phi
        cycle.append(CycleStep(tuple(shifts), receiver % 360.0))
    return program.with_phase_cycle(cycle)


def select_pathway(program: PulseProgram, pathway: str) -> PulseProgram:
    """Pathway filters for the three-pulse family.

    ``"ste"`` keeps coherence stored as polarization between pulses 2 and 3
    (orders -1, 0, +1); ``"he"`` keeps the ordinary echo of pulses 2 and 3
    (orders +1, -1, +1).
    """
    if len(program.pulses) != 3:
        raise ValidationError("pathway selection is defined for three-pulse programs")
    if pathway == "ste":
        return coherence_filter(program, {0: -1, 1: +1})
    if pathway == "he":
        return coherence_filter(program, {0: +1, 1: -2})
    raise ValidationError(f"unknown pathway {pathway!r}; expected 'ste' or 'he'")
