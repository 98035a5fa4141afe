from typing import Dict, Hashable, Optional, Tuple

from utils.logger import get_logger

logger = get_logger("rate_limiter")

PairKey = Tuple[str, str]


def pair_key(a: str, b: str) -> PairKey:
    """Unordered pair identity: (A, B) and (B, A) share one budget"""
    return (a, b) if a <= b else (b, a)


class AlertLimiter:
    """At most `max_frequency` alerts per second for each unordered pair.

    Works on simulation time supplied by the caller, never on the wall
    clock, so a replayed run makes the same decisions. One detector owns
    one limiter and calls it from a single thread.
    """

    def __init__(self, max_frequency: float = 1.0):
        if not max_frequency > 0:
            raise ValueError(f"alert max frequency must be positive, got {max_frequency}")
        self.max_frequency = max_frequency
        self.min_interval = 1.0 / max_frequency

        self.last_emission: Dict[Hashable, float] = {}
        self.emitted = 0
        self.suppressed = 0

    def allow(self, key: Hashable, now: float) -> bool:
        """Record and allow an emission for `key` at `now`, or suppress it"""
        last = self.last_emission.get(key)
        if last is not None and now - last < self.min_interval:
            self.suppressed += 1
            return False
        self.last_emission[key] = now
        self.emitted += 1
        return True

    def last(self, key: Hashable) -> Optional[float]:
        return self.last_emission.get(key)

    def reset(self) -> None:
        self.last_emission.clear()
        self.emitted = 0
        self.suppressed = 0
        logger.info("Alert limiter reset", {"max_frequency": self.max_frequency})

    def get_stats(self) -> dict:
        """Emission counters for the run report"""
        total = self.emitted + self.suppressed
        return {
            "max_frequency": self.max_frequency,
            "pairs_tracked": len(self.last_emission),
            "emitted": self.emitted,
            "suppressed": self.suppressed,
            "suppression_rate": (self.suppressed / total) * 100 if total else None,
        }
