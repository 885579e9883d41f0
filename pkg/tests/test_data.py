import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbr_drqn.data import (
    GroupBar,
    drop_partial,
    fmt_float,
    group_bars,
    log_return_matrix,
    log_return_window,
    parse_minute_csv,
    read_group_csv,
    write_group_csv,
    write_minute_csv,
    zscore,
)
from arbr_drqn.errors import (
    DegenerateError,
    DomainError,
    InsufficientHistoryError,
    OrderingError,
    SchemaError,
    ValidationError,
)
from arbr_drqn.synthetic import regime_walk_minutes

from conftest import FIXTURES, minute

HEADER = "timestamp,open,high,low,close,volume,money\n"


def test_three_rows_in_order():
    text = HEADER + (
        "2020-01-02 09:31,10,11,9,10.5,100,1050\n"
        "2020-01-02 09:32,10.5,10.6,10.1,10.2,50,510\n"
        "2020-01-02 09:33,10.2,10.4,10,10.3,70,721\n"
    )
    bars = parse_minute_csv(text.encode())
    assert [b.close for b in bars] == [10.5, 10.2, 10.3]
    assert bars[0].timestamp.minute == 31


def test_header_case_and_schema_mapping():
    text = "Time,OPEN,High,low,Close,Vol,Amount\n2020-01-02 09:31,1,2,0.5,1.5,3,4\n"
    bars = parse_minute_csv(text, schema={"timestamp": "time", "volume": "vol", "money": "amount"})
    assert bars[0].high == 2 and bars[0].money == 4


def test_high_below_low_names_line():
    text = HEADER + "2020-01-02 09:31,10,11,9,10.5,100,1050\n2020-01-02 09:32,10,9,11,10,1,1\n"
    with pytest.raises(ValidationError, match="line 3"):
        parse_minute_csv(text)


@pytest.mark.parametrize("row", ["2020-01-02 09:31,-1,1,-2,0,1,1", "2020-01-02 09:31,1,1,1,1,-5,1"])
def test_negative_values_rejected(row):
    with pytest.raises(ValidationError, match="line 2"):
        parse_minute_csv(HEADER + row + "\n")


def test_missing_column_is_schema_error():
    with pytest.raises(SchemaError, match="money"):
        parse_minute_csv("timestamp,open,high,low,close,volume\n")


def test_non_monotonic_timestamps():
    text = HEADER + "2020-01-02 09:32,1,1,1,1,1,1\n2020-01-02 09:31,1,1,1,1,1,1\n"
    with pytest.raises(OrderingError):
        parse_minute_csv(text)


def test_round_trip_1000_rows():
    bars = regime_walk_minutes(34, seed=5)[:1000]
    buf = io.StringIO()
    write_minute_csv(bars, buf)
    again = parse_minute_csv(buf.getvalue())
    assert again == bars


def test_fmt_float_round_trips():
    for x in (0.1, 1 / 3, 1e-300, 123456789.123456789):
        assert float(fmt_float(x)) == x


def test_sixty_bar_fixture_makes_two_groups():
    with open(FIXTURES / "minute_60.csv", encoding="utf-8") as fh:
        bars = parse_minute_csv(fh)
    assert len(bars) == 60
    groups = group_bars(bars, 30)
    assert len(groups) == 2
    assert groups[0].close == bars[29].close
    assert groups[1].open == bars[30].open


def test_single_bar_group():
    b = minute(0, 5.0, 6.0, 4.0, 5.0)
    (g,) = group_bars([b], 30)
    assert g.open == g.close == 5.0 and g.n_members == 1


def test_empty_input_groups_to_empty():
    assert group_bars([], 30) == []


def test_97_bars_conserve_volume(rng):
    bars = []
    for i in range(97):
        o = float(rng.uniform(9, 11))
        c = float(rng.uniform(9, 11))
        bars.append(minute(i, o, max(o, c) + 0.1, min(o, c) - 0.1, c, float(rng.integers(1, 1000))))
    groups = group_bars(bars, 30)
    assert len(groups) == 4
    assert groups[-1].n_members == 7
    assert sum(g.volume for g in groups) == sum(b.volume for b in bars)
    assert math.isclose(sum(g.money for g in groups), sum(b.money for b in bars), rel_tol=1e-12)
    for k, g in enumerate(groups):
        members = bars[k * 30:(k + 1) * 30]
        assert g.open == members[0].open and g.close == members[-1].close
        assert g.high == max(b.high for b in members) and g.low == min(b.low for b in members)
        assert g.start_ts == members[0].timestamp
    assert len(drop_partial(groups, 30)) == 3


def test_reset_daily_starts_new_group_each_day():
    bars = regime_walk_minutes(9, seed=1)  # 270 minutes: one full day plus 30 minutes
    groups = group_bars(bars[:250], 30, reset_daily=True)
    assert [g.n_members for g in groups] == [30] * 8 + [10]
    assert groups[-1].start_ts.date() != groups[-2].start_ts.date()


def test_group_csv_round_trip(rng):
    from conftest import random_groups

    groups = random_groups(rng, 5)
    buf = io.StringIO()
    write_group_csv(groups, buf)
    buf.seek(0)
    assert read_group_csv(buf) == groups


def test_log_return_examples():
    assert np.all(log_return_window([5.0] * 10, 9, 8) == 0.0)
    np.testing.assert_allclose(log_return_window([100.0, 110.0], 1, 1), [math.log(1.1)], rtol=1e-15)
    assert abs(math.log(1.1) - 0.09531) < 1e-5
    np.testing.assert_allclose(log_return_window([1.0, 2.0, 4.0, 8.0], 3, 3), [math.log(2)] * 3, rtol=1e-15)


def test_log_return_errors():
    with pytest.raises(InsufficientHistoryError):
        log_return_window([1.0] * 20, 7, 8)
    with pytest.raises(DomainError):
        log_return_window([1.0, 0.0, 2.0], 2, 2)


@given(st.lists(st.floats(0.5, 2.0), min_size=10, max_size=30), st.integers(1, 8))
def test_log_returns_telescope(closes, window):
    t = len(closes) - 1
    w = log_return_window(closes, t, window)
    assert len(w) == window
    assert math.isclose(w.sum(), math.log(closes[t] / closes[t - window]), abs_tol=1e-12)
    np.testing.assert_array_equal(log_return_matrix(np.array(closes), window)[t], w)


def test_zscore_examples():
    np.testing.assert_allclose(zscore([1, 2, 3]), [-math.sqrt(1.5), 0.0, math.sqrt(1.5)], atol=1e-15)
    assert abs(math.sqrt(1.5) - 1.2247) < 1e-4
    assert zscore([1, 2, 3])[1] == 0.0
    with pytest.raises(DegenerateError):
        zscore([5, 5, 5])
    with pytest.raises(InsufficientHistoryError):
        zscore([1.0])


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40).filter(lambda xs: np.std(xs) > 1e-3))
def test_zscore_moments_and_idempotence(xs):
    z = zscore(xs)
    assert abs(z.mean()) < 1e-10 and abs(z.std() - 1) < 1e-10
    np.testing.assert_allclose(zscore(z), z, atol=1e-9)


def test_group_bar_is_immutable():
    g = GroupBar(None, None, 1, 1, 1, 1, 1, 1, 1)
    with pytest.raises(AttributeError):
        g.close = 2
