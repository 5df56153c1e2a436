"""Cyclic time-of-day and day-of-week features.

Both pairs are points on the unit circle, so values stay in [-1, 1] and the
encoding is continuous across midnight and week boundaries.
"""

from __future__ import annotations

import math
from datetime import datetime
from typing import NamedTuple

import numpy as np

SECONDS_PER_DAY = 86400.0
TIME_FEATURE_DIM = 4


class TimeFeatures(NamedTuple):
    sin_day: float
    cos_day: float
    sin_week: float
    cos_week: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)


def encode_time(timestamp: datetime) -> TimeFeatures:
    """Encode a timestamp as (sin, cos) of the day angle and the week angle.

    The day angle is 2*pi*(3600h + 60m + s)/86400; the week angle uses the
    weekday index (Monday = 0) plus the fractional day, period 7.
    """
    seconds = 3600.0 * timestamp.hour + 60.0 * timestamp.minute + timestamp.second
    day_angle = 2.0 * math.pi * seconds / SECONDS_PER_DAY
    week_angle = 2.0 * math.pi * (timestamp.weekday() + seconds / SECONDS_PER_DAY) / 7.0
    return TimeFeatures(
        math.sin(day_angle), math.cos(day_angle),
        math.sin(week_angle), math.cos(week_angle),
    )


ZERO_TIME = np.zeros(TIME_FEATURE_DIM)


def time_vector(timestamp: datetime | None) -> np.ndarray:
    """Feature vector for the model input; zeros when no timestamp is known."""
    if timestamp is None:
        return ZERO_TIME.copy()
    return encode_time(timestamp).as_array()
