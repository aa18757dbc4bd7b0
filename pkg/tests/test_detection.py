import math

import numpy as np
import pytest

from SpinPhotonSim.detection import (DetectorConfig, FilterConfig, FilterShape, TagStream, TimeTag, detect,
                                     filter_transmission, read_metadata, read_tags, route_events,
                                     wavelength_offset_to_angular_frequency, write_metadata, write_tags)
from SpinPhotonSim.dynamics import EmissionTable, run_batch
from SpinPhotonSim.errors import InvalidParameter, TagFileError
from SpinPhotonSim.sequence import parse_sequence
from SpinPhotonSim.system import build_channels, channel_by_label

READOUT = 'period 25\npulse readout kind=drive t0=9.1 shape=gauss fwhm=0.3 target=T1 rabi_ghz=1.566\n'


def table_at(params, times, channel=0, port=0, n_cycles=None):
    """One emission per cycle at the given times."""
    times = np.asarray(times, dtype=float)
    n = len(times)
    return EmissionTable(np.arange(n), times, np.full(n, channel, np.int8), np.zeros(n, np.int8),
                         np.full(n, port, np.int8), build_channels(params), 25.0, n_cycles or n)


@pytest.mark.parametrize('shape', list(FilterShape))
def test_filter_half_maximum(shape):
    cfg = FilterConfig(10.0, 4.0, shape)
    assert filter_transmission(10.0, cfg) == pytest.approx(1.0)
    assert filter_transmission(8.0, cfg) == pytest.approx(0.5)
    assert filter_transmission(12.0, cfg) == pytest.approx(0.5)
    assert filter_transmission(np.array([8.0, 10.0]), cfg) == pytest.approx([0.5, 1.0])
    assert filter_transmission(123.0, None) == 1.0


def test_filter_validation():
    with pytest.raises(InvalidParameter):
        FilterConfig(0.0, 0.0)
    with pytest.raises(InvalidParameter):
        wavelength_offset_to_angular_frequency(0.1, 0.0)


def test_wavelength_conversion():
    assert wavelength_offset_to_angular_frequency(0.125) == pytest.approx(2 * math.pi * 15.598, rel=1e-4)
    assert FilterConfig.from_nm(0.0, 0.125).bandwidth_fwhm == pytest.approx(2 * math.pi * 15.598, rel=1e-4)


def test_branch_selective_filter(params_9t):
    channels = build_channels(params_9t)
    red, blue = channel_by_label(channels, 'T1'), channel_by_label(channels, 'T2')
    cfg = FilterConfig.from_nm(red.frequency_offset, 0.12)
    x = (blue.frequency_offset - red.frequency_offset) / cfg.bandwidth_fwhm
    assert filter_transmission(blue.frequency_offset, cfg) == pytest.approx(math.exp(-4 * math.log(2) * x * x))
    assert filter_transmission(blue.frequency_offset, cfg) < 0.1


def test_detector_validation():
    for kwargs in ({'efficiency': 1.5}, {'laser_leakage': -0.1}, {'jitter_fwhm': -1.0}, {'port': 2}):
        with pytest.raises(InvalidParameter):
            DetectorConfig(**kwargs)


def test_ideal_detector_keeps_times(params):
    events = table_at(params, [1.0, 2.3456, 7.0001])
    tags = detect(events, None, DetectorConfig(jitter_fwhm=0.0, channel_id=3), seed=1)
    assert tags.t_ps.tolist() == [1000, 2346, 7000]
    assert tags.cycle.tolist() == [0, 1, 2]
    assert set(tags.channel) == {3}
    assert tags.truth.tolist() == [0, 1, 2]
    assert tags.n_cycles == 3 and tags.period == 25.0


def test_detection_is_deterministic(params):
    events = table_at(params, np.linspace(1, 20, 500))
    det = DetectorConfig(efficiency=0.4, dark_rate=0.01)
    a = detect(events, None, det, seed=9)
    b = detect(events, None, det, seed=9)
    c = detect(events, None, det, seed=10)
    assert np.array_equal(a.t_ps, b.t_ps) and np.array_equal(a.cycle, b.cycle)
    assert not np.array_equal(a.t_ps, c.t_ps)


def test_efficiency(params):
    events = table_at(params, np.full(20000, 5.0))
    assert len(detect(events, None, DetectorConfig(efficiency=0.0), seed=1)) == 0
    kept = len(detect(events, None, DetectorConfig(efficiency=0.3), seed=1))
    assert kept == pytest.approx(6000, abs=5 * math.sqrt(20000 * 0.3 * 0.7))


def test_jitter_width(params):
    events = table_at(params, np.full(20000, 5.0))
    tags = detect(events, None, DetectorConfig(jitter_fwhm=100.0), seed=2)
    sigma = 100.0 / (2 * math.sqrt(2 * math.log(2)))
    assert np.std(tags.t_ps) == pytest.approx(sigma, rel=0.03)
    assert np.mean(tags.t_ps) == pytest.approx(5000.0, abs=1.0)


def test_dark_counts(params):
    events = EmissionTable.empty(build_channels(params), 25.0, n_cycles=10000)
    tags = detect(events, None, DetectorConfig(dark_rate=0.01), seed=3)
    assert len(tags) == pytest.approx(2500, abs=5 * 50)
    assert np.all((tags.cycle >= 0) & (tags.cycle < 10000))
    assert np.all(tags.truth == -1)
    assert tags.t_ps.min() >= -300 and tags.t_ps.max() <= 25300


def test_dead_time(params):
    events = EmissionTable(np.array([0, 0, 1]), np.array([1.0, 1.01, 1.0]), np.zeros(3, np.int8),
                           np.zeros(3, np.int8), np.zeros(3, np.int8), build_channels(params), 25.0, 2)
    tags = detect(events, None, DetectorConfig(jitter_fwhm=0.0, dead_time=100.0), seed=1)
    assert tags.t_ps.tolist() == [1000, 1000]
    assert tags.cycle.tolist() == [0, 1]


def test_filter_suppresses_other_branch(params_9t):
    channels = build_channels(params_9t)
    cfg = FilterConfig.from_nm(channel_by_label(channels, 'T1').frequency_offset, 0.12)
    red = detect(table_at(params_9t, np.full(5000, 3.0), channel=0), cfg, DetectorConfig(), seed=4)
    blue = detect(table_at(params_9t, np.full(5000, 3.0), channel=1), cfg, DetectorConfig(), seed=4)
    assert len(red) == 5000
    assert len(blue) < 0.1 * 5000


def test_erased_events_see_both_lines(params_9t):
    channels = build_channels(params_9t)
    cfg = FilterConfig.from_nm(channel_by_label(channels, 'T1').frequency_offset, 0.12)
    events = table_at(params_9t, np.full(20000, 3.0), port=1)
    tags = detect(events, cfg, DetectorConfig(), seed=5)
    expected = 0.5 * (1.0 + filter_transmission(channels[1].frequency_offset, cfg))
    assert len(tags) / 20000 == pytest.approx(expected, abs=0.02)


def test_port_selection(params):
    events = EmissionTable(np.arange(4), np.full(4, 2.0), np.zeros(4, np.int8), np.zeros(4, np.int8),
                           np.array([1, -1, 1, -1], np.int8), build_channels(params), 25.0, 4)
    plus = detect(events, None, DetectorConfig(port=1, jitter_fwhm=0.0), seed=1)
    minus = detect(events, None, DetectorConfig(port=-1, jitter_fwhm=0.0), seed=1)
    both = detect(events, None, DetectorConfig(jitter_fwhm=0.0), seed=1)
    assert plus.cycle.tolist() == [0, 2]
    assert minus.cycle.tolist() == [1, 3]
    assert len(both) == 4


def test_laser_leakage_inside_pulse(params):
    seq = parse_sequence(READOUT)
    events = EmissionTable.empty(build_channels(params), seq.period, n_cycles=3000)
    tags = detect(events, None, DetectorConfig(jitter_fwhm=0.0, laser_leakage=1.0), seed=6, seq=seq)
    start, end = seq.pulse('readout').support
    assert len(tags) == 3000
    assert np.all((tags.t_ps >= start * 1000) & (tags.t_ps <= end * 1000))
    assert np.mean(tags.t_ps) == pytest.approx(seq.pulse('readout').t_peak * 1000, abs=10)
    assert len(detect(events, None, DetectorConfig(laser_leakage=1.0), seed=6)) == 0


def test_route_split_and_copy(params):
    events = run_batch(1, parse_sequence('period 25\npulse reset kind=reset t0=0 dur=0.1\n'), params,
                       n_trajectories=1000).table
    ports = route_events(events, 2, seed=3)
    assert len(ports[0]) + len(ports[1]) == len(events)
    assert not set(ports[0].cycle) & set(ports[1].cycle)
    assert abs(len(ports[0]) - 500) < 5 * math.sqrt(250)
    copies = route_events(events, 3, seed=3, mode='copy')
    assert all(c is events for c in copies)
    with pytest.raises(InvalidParameter):
        route_events(events, 2, seed=3, mode='mirror')
    with pytest.raises(InvalidParameter):
        route_events(events, 0, seed=3)


def test_tag_file(tmp_path, params):
    tags = detect(table_at(params, [1.0, 2.0, 3.0]), None, DetectorConfig(jitter_fwhm=0.0, channel_id=2), seed=1)
    path = tmp_path / 'tags.csv'
    write_tags(path, tags)
    assert path.read_text().splitlines() == ['cycle,channel,t_ps', '0,2,1000', '1,2,2000', '2,2,3000']
    write_metadata(str(path) + '.meta', {'period_ns': 25.0, 'n_cycles': 10})
    stream = read_tags(path)
    assert stream.period == 25.0
    assert stream.n_cycles == 10
    assert stream.t_ps.tolist() == [1000, 2000, 3000]
    assert read_metadata(str(path) + '.meta') == {'n_cycles': '10', 'period_ns': '25.0'}


def test_empty_tag_file(tmp_path):
    path = tmp_path / 'empty.csv'
    write_tags(path, TagStream.empty(25.0, 5))
    stream = read_tags(path, period=25.0, n_cycles=5)
    assert len(stream) == 0 and stream.n_cycles == 5


@pytest.mark.parametrize('text, line', [
    ('cycle,t_ps\n', 1),
    ('cycle,channel,t_ps\n0,1\n', 2),
    ('cycle,channel,t_ps\n0,1,5\n0,1,x\n', 3),
    ('cycle,channel,t_ps\n1,0,5\n0,0,9\n', 3),
    ('cycle,channel,t_ps\n-1,0,5\n', 2),
])
def test_malformed_tag_files(tmp_path, text, line):
    path = tmp_path / 'bad.csv'
    path.write_text(text)
    with pytest.raises(TagFileError) as info:
        read_tags(path)
    assert info.value.line == line


def test_stream_channel_selection():
    stream = TagStream([0, 0, 1], [0, 1, 0], [5, 3, 1], [-1, -1, -1], 25.0, 2)
    assert stream.t_ps.tolist() == [3, 5, 1]
    assert stream.tags()[0] == TimeTag(channel_id=1, cycle=0, t=3, truth=None)
    assert len(stream.of_channel(0)) == 2
    assert len(stream.of_channel([0, 1])) == 3
    assert stream.of_channel(None) is stream
    merged = TagStream.merge([stream, stream.of_channel(1)])
    assert len(merged) == 4
