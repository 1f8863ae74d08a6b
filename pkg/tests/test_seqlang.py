import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stechosim.seqlang import (BUILTINS, STE_FAMILY, TRAINS, Acquire, Delay, ProgramSyntaxError, Pulse,
                               UnknownBuiltin, UnknownPhaseError, ValidationError, builtin, coherence_filter,
                               format_duration, format_program, parse_duration, parse_program, select_pathway)

taus = st.sampled_from([10e-6, 50e-6, 100e-6, 0.25e-3, 1e-3, 2.5e-3])


def test_hahn_text_example():
    prog = parse_program("p(90,x) d(1ms) p(180,y) d(1ms) acq(2ms,10us)")
    assert len(prog.events) == 5
    assert prog.total_duration == pytest.approx(4e-3, abs=1e-15)
    pi = prog.pulses[1]
    assert pi.angle_deg == 180 and pi.start == pytest.approx(1e-3)
    assert prog.acquisitions[0].n_samples == 201


def test_repetition_with_phase_list():
    prog = parse_program("p(90,x) [ d(1ms) p(180,{y,-y}) d(1ms) acq(10us,1us) ]*4")
    phases = [p.phase_deg for p in prog.pulses[1:]]
    assert phases == [90, 270, 90, 270]
    assert len(prog.acquisitions) == 4


def test_nested_repetition():
    prog = parse_program("[ p(90,x) [ d(1us) ]*3 ]*2")
    assert len(prog.pulses) == 2 and len(prog.events) == 8


def test_events_are_time_ordered():
    prog = parse_program("p(90,x) d(1ms) p(180,y) d(2ms) acq(1ms,0.1ms) d(3us)")
    starts = [e.start for e in prog.events]
    assert starts == sorted(starts)
    for a, b in zip(prog.events, prog.events[1:]):
        assert b.start == pytest.approx(a.start + a.duration, abs=1e-18)


def test_negative_duration_is_validation_error():
    with pytest.raises(ValidationError):
        parse_program("p(90,x) d(-1ms)")


def test_unknown_phase():
    with pytest.raises(UnknownPhaseError):
        parse_program("p(90,q)")


def test_numeric_phase_degrees():
    assert parse_program("p(90,45)").pulses[0].phase == pytest.approx(math.pi / 4)


@pytest.mark.parametrize("src,line,col", [
    ("p(90,x) d(1ms", 1, 14),
    ("p(90,x)\n  d(1ms) zz(3)", 2, 10),
])
def test_syntax_error_location(src, line, col):
    with pytest.raises(ProgramSyntaxError) as info:
        parse_program(src)
    assert (info.value.lineno, info.value.offset) == (line, col)


def test_acquire_window_needs_dwell():
    with pytest.raises(ValidationError):
        parse_program("acq(1ms)")


@pytest.mark.parametrize("text,value", [("200us", 200e-6), ("1.8ms", 1.8e-3), ("0.5 s", 0.5),
                                        ("25.5µs", 25.5e-6), (3e-3, 3e-3)])
def test_parse_duration(text, value):
    assert parse_duration(text) == pytest.approx(value, rel=1e-15)


def test_parse_duration_rejects_garbage():
    with pytest.raises(ValueError):
        parse_duration("5 minutes")


@given(st.floats(1e-7, 10.0))
def test_format_duration_roundtrip(x):
    assert parse_duration(format_duration(x)) == x


# -- builtins -----------------------------------------------------------------

def test_cpmg4_phases():
    prog = builtin("CPMG4", 1e-3, n=2)
    assert [p.phase_deg for p in prog.pulses[1:]] == [90, 90, 270, 270] * 2
    assert all(p.angle_deg == 180 for p in prog.pulses[1:])


def test_ste_timing():
    prog = builtin("STE", 0.5e-3, 8e-3)
    assert [p.angle_deg for p in prog.pulses] == [90, 90, 90]
    assert [p.start for p in prog.pulses] == pytest.approx([0, 0.5e-3, 8.5e-3], abs=1e-15)
    # stimulated echo tau after the last pulse, Hahn echo t1 - tau after it
    assert prog.sample_times() == pytest.approx([9.0e-3, 16.0e-3], abs=1e-15)


def test_hahn_builtin():
    prog = builtin("HE", 1e-3)
    kinds = [type(e) for e in prog.events]
    assert kinds == [Pulse, Delay, Pulse, Delay, Acquire]
    assert prog.pulses[1].angle_deg == 180 and prog.pulses[1].phase_deg == 0
    assert prog.sample_times() == pytest.approx([2e-3])


def test_unknown_builtin():
    with pytest.raises(UnknownBuiltin):
        builtin("MLEV16", 1e-3)


def test_ste_needs_t1():
    with pytest.raises(ValidationError):
        builtin("STE_CPMG1", 1e-3)


@given(st.sampled_from(BUILTINS), taus, st.integers(1, 6), st.sampled_from([0.0, 0.5, 1.0]))
def test_builtin_roundtrip(name, tau, n, wfrac):
    t1 = 15 * tau if name in STE_FAMILY else None
    prog = builtin(name, tau, t1, n, window=wfrac * tau, dwell=tau / 10 if wfrac else None)
    assert parse_program(format_program(prog)) == prog


@given(st.sampled_from(sorted(TRAINS)), taus, st.integers(1, 8), st.sampled_from([0.0, 0.4]))
def test_train_pulse_spacing_and_echo_times(name, tau, n, wfrac):
    prog = builtin(name, tau, n=n, window=wfrac * tau, dwell=tau / 10 if wfrac else None)
    pis = prog.pulses[1:]
    assert len(pis) == n * TRAINS[name][1]
    for a, b in zip(pis, pis[1:]):
        assert b.start - a.start == pytest.approx(2 * tau, rel=1e-9)
    centers = [a.start + a.duration / 2 for a in prog.acquisitions]
    for k, c in enumerate(centers, start=1):
        assert c == pytest.approx(2 * tau * k, rel=1e-9)


@given(taus, st.integers(1, 10))
def test_cpmg2_alternates(tau, n):
    pis = builtin("CPMG2", tau, n=n).pulses[1:]
    assert len(pis) == 2 * n
    assert all(a.phase_deg != b.phase_deg for a, b in zip(pis, pis[1:]))


def test_window_larger_than_echo_spacing_rejected():
    with pytest.raises(ValidationError):
        builtin("CPMG1", 1e-4, n=2, window=3e-4)


# -- phase cycling ------------------------------------------------------------

def test_pathway_cycles():
    prog = builtin("STE", 1e-3, 5e-3)
    ste = select_pathway(prog, "ste")
    assert len(ste.phase_cycle) == 16
    # receiver follows -phi0 + phi1
    for step in ste.phase_cycle:
        s0, s1, s2 = step.pulse_shifts
        assert s2 == 0
        assert step.receiver_deg == pytest.approx((-s0 + s1) % 360)
    assert ste.events == prog.events


def test_pathway_requires_three_pulses():
    with pytest.raises(ValidationError):
        select_pathway(builtin("HE", 1e-3), "ste")
    with pytest.raises(ValidationError):
        select_pathway(builtin("STE", 1e-3, 3e-3), "dq")


def test_coherence_filter_index_check():
    with pytest.raises(ValidationError):
        coherence_filter(builtin("HE", 1e-3), {5: 1})
