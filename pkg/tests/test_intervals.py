from hypothesis import given, settings, strategies as st

from mpgsim.intervals import IntervalSet, periodic_on_measure

H = 200

raw_intervals = st.lists(st.tuples(st.integers(0, H), st.integers(0, H)), max_size=8)


def ticks(raw) -> set[int]:
    out = set()
    for a, b in raw:
        out.update(range(a, b))
    return out


def to_set(ts: set[int]) -> IntervalSet:
    return IntervalSet((t, t + 1) for t in ts)


def test_normalization_merges_adjacent_and_overlapping():
    s = IntervalSet([(5, 10), (0, 3), (3, 5), (20, 20), (8, 12)])
    assert s.intervals == ((0, 12),)
    assert s.measure() == 12


def test_empty_and_degenerate():
    assert not IntervalSet()
    assert IntervalSet([(4, 4), (7, 3)]).measure() == 0


def test_half_open_membership():
    s = IntervalSet([(0, 10)])
    assert 0 in s and 9 in s and 10 not in s


@given(raw_intervals)
def test_normalized_form(raw):
    s = IntervalSet(raw)
    iv = s.intervals
    for (a, b), (c, d) in zip(iv, iv[1:]):
        assert a < b < c < d
    assert all(a < b for a, b in iv)
    assert s.measure() == len(ticks(raw))


@given(raw_intervals, raw_intervals)
def test_set_algebra_matches_tick_oracle(r1, r2):
    a, b = IntervalSet(r1), IntervalSet(r2)
    ta, tb = ticks(r1), ticks(r2)
    assert a | b == to_set(ta | tb)
    assert a & b == to_set(ta & tb)
    assert a - b == to_set(ta - tb)


@given(raw_intervals, st.integers(-10, H + 10), st.integers(-10, H + 10))
def test_measure_within_and_clip(raw, lo, hi):
    s = IntervalSet(raw)
    expect = len([t for t in ticks(raw) if lo <= t < hi])
    assert s.measure_within(lo, hi) == expect
    assert s.clip(lo, hi).measure() == expect


@given(st.lists(raw_intervals, min_size=1, max_size=5))
def test_intersect_all_and_union_all(raws):
    sets = [IntervalSet(r) for r in raws]
    inter = set.intersection(*(ticks(r) for r in raws))
    union = set.union(*(ticks(r) for r in raws))
    assert IntervalSet.intersect_all(sets) == to_set(inter)
    assert IntervalSet.union_all(sets) == to_set(union)


@settings(max_examples=300)
@given(st.integers(0, 50), st.integers(1, 20), st.integers(0, 20), st.integers(0, 15),
       st.integers(-5, 400), st.integers(-5, 400))
def test_periodic_on_measure_matches_enumeration(t0, period, on, count, lo, hi):
    on = min(on, period)
    expect = 0
    for k in range(count):
        start = t0 + k * period
        expect += len([t for t in range(start, start + on) if lo <= t < hi])
    assert periodic_on_measure(t0, period, on, count, lo, hi) == expect
