import math

import pytest

from SpinPhotonSim.errors import (InvalidParameter, NonPositiveDetuning, OutOfCycle, OverlapError,
                                  SequenceSyntaxError, UnknownTarget)
from SpinPhotonSim.sequence import (DriveRole, PulseKind, PulseShape, RotationCalibration, envelope, envelope_array,
                                    load_sequence, parse_sequence, resolve_rotation_angle, rotation_angle_from_power,
                                    serialize_sequence)

PUMPING = """
# spin pumping
period 25
pulse reset kind=reset t0=0 dur=0.1
pulse pump kind=drive t0=5 shape=square dur=6 target=T1 rabi_ghz=1.158
pulse readout kind=drive t0=19.1 shape=gauss fwhm=0.3 target=T1 rabi_ghz=1.566
scan pump.dur from=0 to=12 steps=13
"""


def test_parse():
    seq = parse_sequence(PUMPING)
    assert seq.period == 25
    assert [p.name for p in seq.pulses] == ['reset', 'pump', 'readout']
    reset, pump, readout = seq.pulses
    assert reset.kind is PulseKind.Reset
    assert pump.role is DriveRole.Pump
    assert readout.role is DriveRole.Readout
    assert pump.rabi == pytest.approx(2 * math.pi * 1.158)
    assert readout.shape is PulseShape.Gaussian
    assert readout.support == pytest.approx((19.1, 20.9))
    assert readout.t_peak == pytest.approx(20.0)
    assert pump.support == (5, 11)


def test_scan_points():
    seq = parse_sequence(PUMPING)
    points = seq.scan_points()
    assert len(points) == 13
    assert points[0] == (0.0,) and points[-1] == (12.0,)
    fixed = seq.at((3.0,))
    assert fixed.scans == ()
    assert fixed.pulse('pump').dur == 3.0
    assert fixed.scan_points() == [()]
    with pytest.raises(InvalidParameter):
        seq.at(())


def test_serialize_preserves_content():
    seq = parse_sequence(PUMPING)
    again = parse_sequence(serialize_sequence(seq))
    assert again == seq
    assert again.content_hash() == seq.content_hash()
    assert seq.at((1.0,)).content_hash() != seq.at((2.0,)).content_hash()


def test_period_after_pulses():
    seq = parse_sequence('pulse p kind=drive t0=20 shape=square dur=9 target=T2 rabi_ghz=1\nperiod 30\n')
    assert seq.period == 30


@pytest.mark.parametrize('text, error', [
    ('period 25\nwiggle 3\n', SequenceSyntaxError),
    ('pulse a kind=drive t0=1 shape=square dur=2 target=T1 rabi_ghz=1\n'
     'pulse b kind=drive t0=2 shape=square dur=2 target=T2 rabi_ghz=1\n', OverlapError),
    ('pulse a kind=drive t0=1 shape=square dur=2 target=T7 rabi_ghz=1\n', UnknownTarget),
    ('period 10\npulse a kind=drive t0=9 shape=square dur=2 target=T1 rabi_ghz=1\n', OutOfCycle),
    ('pulse r kind=rotate t0=9 theta_pi=0.5 power_mw=1\n', SequenceSyntaxError),
    ('pulse r kind=rotate t0=9 theta_pi=half\n', SequenceSyntaxError),
    ('pulse a kind=drive t0=1 shape=gauss dur=2 target=T1 rabi_ghz=1\n', SequenceSyntaxError),
    ('pulse a kind=drive t0=1 shape=square dur=2 target=T1 rabi_ghz=1\nscan b.dur from=0 to=1 steps=2\n',
     UnknownTarget),
    ('pulse a kind=drive t0=1 shape=square dur=2 target=T1 rabi_ghz=1\nscan a.target from=0 to=1 steps=2\n',
     SequenceSyntaxError),
])
def test_invalid_sequences(text, error):
    with pytest.raises(error):
        parse_sequence(text)


def test_syntax_error_carries_line_number():
    with pytest.raises(SequenceSyntaxError) as info:
        parse_sequence('period 25\n\npulse a kind=drive t0=x shape=square dur=1 target=T1 rabi_ghz=1\n')
    assert info.value.line == 3


def test_scan_leaving_cycle_fails_at_parse():
    text = ('period 25\n'
            'pulse pump kind=drive t0=5 shape=square dur=6 target=T1 rabi_ghz=1\n'
            'pulse r kind=rotate t0=12 theta_pi=0.5\n'
            'scan r.theta_pi from=0 to=1 steps=3\n'
            'scan pump.dur from=0 to=30 steps=4\n')
    with pytest.raises(SequenceSyntaxError) as info:
        parse_sequence(text)
    assert info.value.line == 5
    assert 'pump.dur=30.0' in str(info.value)


def test_scan_into_other_pulse_fails_at_parse():
    text = ('pulse pump kind=drive t0=5 shape=square dur=6 target=T1 rabi_ghz=1\n'
            'pulse readout kind=drive t0=19.1 shape=gauss fwhm=0.3 target=T1 rabi_ghz=1.566\n'
            'scan readout.t0 from=19.1 to=9.1 steps=3\n')
    with pytest.raises(SequenceSyntaxError) as info:
        parse_sequence(text)
    assert info.value.line == 3
    assert isinstance(info.value.__cause__, OverlapError)


def test_linked_scan():
    text = ('pulse rot1 kind=rotate t0=9 theta_pi=0.5\n'
            'pulse rot2 kind=rotate t0=9.02 theta_pi=0.5\n'
            'scan rot1.theta_pi,rot2.theta_pi from=0 to=1 steps=5\n'
            'scan rot2.t0 from=9.02 to=10.02 steps=3\n')
    seq = parse_sequence(text)
    assert seq.scans[0].label == 'rot1.theta_pi+rot2.theta_pi'
    assert len(seq.scan_points()) == 15
    fixed = seq.at((0.25, 10.02))
    assert fixed.pulse('rot1').theta_pi == fixed.pulse('rot2').theta_pi == 0.25
    assert fixed.pulse('rot2').t0 == 10.02
    assert parse_sequence(serialize_sequence(seq)) == seq
    with pytest.raises(SequenceSyntaxError):
        parse_sequence('pulse r kind=rotate t0=9 theta_pi=0.5\nscan r.theta_pi,theta_pi from=0 to=1 steps=2\n')


def test_serialize_keeps_rotation_duration():
    seq = parse_sequence('pulse r kind=rotate t0=9 dur=0.004 theta_pi=0.5\n')
    text = serialize_sequence(seq)
    assert 'dur=0.004' in text
    assert parse_sequence(text).pulse('r').dur == 0.004
    plain = parse_sequence('pulse r kind=rotate t0=9 theta_pi=0.5\n')
    assert parse_sequence(text).content_hash() != plain.content_hash()


def test_rotations_may_touch_drive_edges():
    seq = parse_sequence('pulse p kind=drive t0=2 shape=square dur=2 target=T1 rabi_ghz=1\n'
                         'pulse r kind=rotate t0=4 theta_pi=1\n')
    assert seq.pulse('r').theta == pytest.approx(math.pi)


def test_rotation_power_law():
    cal = RotationCalibration()
    assert rotation_angle_from_power(1.0, cal) == pytest.approx(math.pi)
    assert rotation_angle_from_power(2.0, cal) == pytest.approx(math.pi * 2 ** 0.77)
    assert rotation_angle_from_power(1.0, cal, detuning=1.2) == pytest.approx(math.pi / 2)
    assert rotation_angle_from_power(cal.power_for(3 * math.pi), cal) == pytest.approx(3 * math.pi)
    with pytest.raises(NonPositiveDetuning):
        rotation_angle_from_power(1.0, cal, detuning=0.0)
    with pytest.raises(InvalidParameter):
        RotationCalibration(exponent=1.5)


def test_rotation_angle_of_pulse():
    seq = parse_sequence('pulse r kind=rotate t0=9 power_mw=2 detuning_nm=0.6\n'
                         'pulse s kind=rotate t0=10 theta_pi=0.5\n')
    cal = RotationCalibration(coefficient=2.0)
    assert resolve_rotation_angle(seq.pulse('r'), cal) == pytest.approx(2.0 * 2 ** 0.77)
    assert resolve_rotation_angle(seq.pulse('s'), cal) == pytest.approx(math.pi / 2)


def test_envelopes():
    readout = parse_sequence(PUMPING).pulse('readout')
    assert envelope(readout, 20.0) == pytest.approx(1.0)
    assert envelope(readout, 20.15) == pytest.approx(0.5)
    assert envelope(readout, 19.0) == 0.0
    assert envelope_array(readout, [19.85, 20.0, 21.0]) == pytest.approx([0.5, 1.0, 0.0])
    pump = parse_sequence(PUMPING).pulse('pump')
    assert envelope(pump, 5.0) == 1.0 and envelope(pump, 11.0) == 0.0


def test_presets_parse(presets):
    names = sorted(p.stem for p in presets.glob('*.seq'))
    assert names == ['fig2_init', 'fig2_lifetime', 'fig2_optical_rabi', 'fig3_rabi', 'fig3_rabi_099', 'fig3_rabi_142',
                     'fig3_ramsey', 'fig3_ramsey_map', 'fig4_computational', 'fig4_g2', 'fig5_superposition']
    for path in presets.glob('*.seq'):
        seq = load_sequence(path)
        for point in seq.scan_points():
            seq.at(point)
