import math

import numpy as np


def frames_strictly_increasing(frames) -> bool:
    """
    Takes a list/array of frame numbers.
    Returns True if every frame is larger than the one before it (empty and single-frame lists pass).
    """
    frames = np.asarray(frames)
    if frames.size < 2:
        return True
    return bool(np.all(np.diff(frames) > 0))


def first_non_increasing_index(frames):
    """
    Returns the index of the first frame that is not larger than its predecessor, or None.
    Used to point parse errors at the offending record.
    """
    frames = np.asarray(frames)
    if frames.size < 2:
        return None
    bad = np.nonzero(np.diff(frames) <= 0)[0]
    return int(bad[0]) + 1 if bad.size else None


def wrapped_steps(headings) -> np.ndarray:
    """
    Given consecutive headings (radians), return the wrapped absolute change between neighbours in [0, pi].
    """
    headings = np.asarray(headings, dtype=np.float64)
    if headings.size < 2:
        return np.zeros(0)
    d = np.mod(np.abs(np.diff(headings)), 2.0 * math.pi)
    return np.where(d > math.pi, 2.0 * math.pi - d, d)


def is_heading_continuous(headings, max_step: float, tol: float = 1e-12) -> bool:
    """
    True if no consecutive heading change exceeds max_step (+ tol for rounding).
    This is the premise the continuity losses rely on.
    """
    steps = wrapped_steps(headings)
    return bool(np.all(steps <= max_step + tol))


# ---- TESTS ----
def test_sequence_checks():
    assert frames_strictly_increasing([0, 1, 5, 9]) == True
    assert frames_strictly_increasing([0, 1, 1, 2]) == False
    assert frames_strictly_increasing([]) == True
    assert first_non_increasing_index([3, 4, 2, 7]) == 2
    assert first_non_increasing_index([3, 4, 5]) is None

    # Check w wraparound at +-pi
    headings = [math.pi - 0.05, -math.pi + 0.03, -math.pi + 0.1]
    steps = wrapped_steps(headings)
    assert abs(steps[0] - 0.08) < 1e-12
    assert is_heading_continuous(headings, max_step=0.1) == True
    assert is_heading_continuous([0.0, 0.5], max_step=0.1) == False

    print("All sequence check tests passed!")


if __name__ == '__main__':
    test_sequence_checks()
