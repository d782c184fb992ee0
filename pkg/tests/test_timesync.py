from datetime import datetime, timezone
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from herdpipe.timesync import (
    AlignmentError, ClockFitError, ClockMap, GpsCsvError, GpsSample, align_frame, as_frame_rate,
    clock_from_dict, clock_to_dict, fit_clock, frame_to_wall, parse_gps_csv, parse_utc_ms,
    wall_to_frame,
)

HEADER = "cts,date,lat,lon\n"


def epoch_ms(text):
    return int(datetime.fromisoformat(text).replace(tzinfo=timezone.utc).timestamp() * 1000)


def test_single_row_maps_fields():
    out = parse_gps_csv(HEADER + "0,2020-03-18T01:00:00.000Z,-30.5,151.6\n")
    assert out.samples == [GpsSample(0, epoch_ms("2020-03-18T01:00:00"), -30.5, 151.6)]
    assert out.malformed == []


def test_two_rows_one_second_apart():
    out = parse_gps_csv(HEADER + "0,2020-03-18T01:00:00.000Z,1,2\n1000,2020-03-18T01:00:01.000Z,1,2\n")
    assert out.samples[1].wall_clock - out.samples[0].wall_clock == 1000


def test_corrupt_middle_row_is_reported():
    text = HEADER + ("0,2020-03-18T01:00:00.000Z,1,2\n"
                     "500,not-a-date,1,2\n"
                     "1000,2020-03-18T01:00:01.000Z,1,2\n")
    out = parse_gps_csv(text)
    assert len(out.samples) == 2
    assert len(out.malformed) == 1 and out.malformed[0][0] == 3
    with pytest.raises(GpsCsvError, match="line 3"):
        parse_gps_csv(text, strict=True)


def test_csv_errors():
    with pytest.raises(GpsCsvError):
        parse_gps_csv("")
    with pytest.raises(GpsCsvError, match="missing GPS column"):
        parse_gps_csv("a,b\n1,2\n")
    with pytest.raises(GpsCsvError, match="does not increase"):
        parse_gps_csv(HEADER + "10,2020-03-18T01:00:00Z,1,2\n5,2020-03-18T01:00:01Z,1,2\n")


def test_custom_columns():
    text = "t,utc,la,lo\n0,2020-01-01T00:00:00Z,0,0\n"
    out = parse_gps_csv(text, {"stream_time": "t", "wall_clock": "utc", "latitude": "la",
                               "longitude": "lo"})
    assert out.samples[0].wall_clock == epoch_ms("2020-01-01T00:00:00")


def test_parse_utc_ms_forms():
    assert parse_utc_ms("1970-01-01T00:00:01.250Z") == 1250
    assert parse_utc_ms("1970-01-01T01:00:00+01:00") == 0
    assert parse_utc_ms("1970-01-01T00:00:00") == 0


def test_fit_two_point_exact():
    clock = fit_clock([GpsSample(0, 1000, 0, 0), GpsSample(10000, 11000, 0, 0)], 30)
    assert clock.offset == 1000 and clock.rate == pytest.approx(1.0, abs=1e-12)


def test_fit_with_drift():
    clock = fit_clock([GpsSample(0, 1000, 0, 0), GpsSample(10000, 11010, 0, 0)], 30)
    assert clock.offset == 1000 and clock.rate == pytest.approx(1.001, abs=1e-12)


def test_fit_rejects_bad_input():
    with pytest.raises(ClockFitError):
        fit_clock([GpsSample(0, 0, 0, 0)])
    with pytest.raises(ClockFitError, match="outside"):
        fit_clock([GpsSample(0, 0, 0, 0), GpsSample(1000, 1500, 0, 0)])


def test_fit_epoch_scale_values():
    base = epoch_ms("2020-03-18T01:00:00")
    samples = [GpsSample(k * 1000, base + 250 + round(k * 1000 * 1.0005), 0, 0) for k in range(60)]
    clock = fit_clock(samples, 30)
    assert clock.offset == base + 250
    assert clock.rate == pytest.approx(1.0005, abs=1e-6)


@pytest.mark.parametrize("frame,rate,expected", [(0, 1.0, 1000), (300, 1.0, 11000), (300, 1.001, 11010)])
def test_frame_to_wall(frame, rate, expected):
    assert frame_to_wall(ClockMap(1000, rate, 30), frame) == expected


def test_align_examples():
    src = ClockMap(5000, 1.0, 30)
    assert align_frame(src, src, 42) == 42
    dst = ClockMap(3000, 1.0, 30)
    assert align_frame(src, dst, 300) == 360
    with pytest.raises(AlignmentError):
        align_frame(dst, src, 0)


def test_wall_to_frame_ties_go_earlier():
    clock = ClockMap(0, 1.0, 1)  # one frame per second
    assert wall_to_frame(clock, 500) == 0
    assert wall_to_frame(clock, 501) == 1


def test_frame_rate_coercion():
    assert as_frame_rate(29.97) == Fraction(2997, 100)
    assert as_frame_rate("30000/1001") == Fraction(30000, 1001)
    with pytest.raises(ValueError):
        as_frame_rate(0)


def test_clock_dict_round_trip():
    clock = ClockMap(123456789, 1.0004, Fraction(30000, 1001), 0.5)
    assert clock_from_dict(clock_to_dict(clock)) == clock


@given(st.integers(0, 10**6), st.integers(-10**6, 10**6), st.integers(0, 10**5))
def test_same_rate_alignment_is_frame_shift(offset, delta, frame):
    """Pure offset at equal frame rates shifts frames by delta*fps/1000 (nearest, ties earlier)."""
    src, dst = ClockMap(offset + delta, 1.0, 30), ClockMap(offset, 1.0, 30)
    exact = Fraction(frame) + Fraction(delta * 30, 1000)
    if exact < 0:
        return
    expect = -((-(2 * exact - 1)) // 2)  # ceil(exact - 1/2)
    assert align_frame(src, dst, frame) == expect
