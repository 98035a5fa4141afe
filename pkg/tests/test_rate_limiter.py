import pytest
from hypothesis import given, strategies as st

from utils.rate_limiter import AlertLimiter, pair_key


def test_pair_key_is_unordered():
    assert pair_key("veh2", "veh10") == pair_key("veh10", "veh2") == ("veh10", "veh2")


def test_second_alert_within_interval_is_suppressed():
    limiter = AlertLimiter(1.0)
    key = pair_key("a", "b")
    assert limiter.allow(key, 10.0)
    assert not limiter.allow(key, 10.5)
    assert limiter.allow(key, 11.0)
    assert limiter.last(key) == 11.0


def test_pairs_have_separate_budgets():
    limiter = AlertLimiter(1.0)
    assert limiter.allow(("a", "b"), 0.0)
    assert limiter.allow(("a", "c"), 0.1)


def test_higher_frequency_shortens_interval():
    limiter = AlertLimiter(4.0)
    assert limiter.allow("k", 0.0)
    assert limiter.allow("k", 0.25)


@given(st.lists(st.floats(min_value=0, max_value=100), min_size=1, max_size=60))
def test_allowed_emissions_are_spaced(times):
    limiter = AlertLimiter(1.0)
    allowed = [t for t in sorted(times) if limiter.allow("k", t)]
    assert all(b - a >= 1.0 for a, b in zip(allowed, allowed[1:]))


def test_stats_and_reset():
    limiter = AlertLimiter(1.0)
    limiter.allow("k", 0.0)
    limiter.allow("k", 0.2)
    stats = limiter.get_stats()
    assert stats["emitted"] == 1
    assert stats["suppressed"] == 1
    assert stats["suppression_rate"] == 50.0
    limiter.reset()
    assert limiter.get_stats()["pairs_tracked"] == 0
    assert limiter.get_stats()["suppression_rate"] is None


def test_rejects_non_positive_frequency():
    with pytest.raises(ValueError):
        AlertLimiter(0.0)
