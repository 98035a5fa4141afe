from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """Mean and Student-t confidence interval; bounds are None below two samples"""
    data = np.asarray([v for v in values if v is not None], dtype=float)
    if data.size == 0:
        return None, None, None
    mean = float(data.mean())
    if data.size < 2:
        return mean, None, None
    sem = stats.sem(data)
    if sem == 0:
        return mean, mean, mean
    low, high = stats.t.interval(confidence, data.size - 1, loc=mean, scale=sem)
    return mean, float(low), float(high)
