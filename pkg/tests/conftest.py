import numpy as np
import pytest


def pgm_bytes(values: np.ndarray, maxval: int = 255) -> bytes:
    """Encode a float [0,1] array as binary 8-bit PGM bytes."""
    arr = np.clip(np.round(np.asarray(values) * maxval), 0, maxval).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    return header + arr.tobytes()


def blob_array(size=32, background=0.1, blobs=()) -> np.ndarray:
    arr = np.full((size, size), background)
    for (x, y, w, h, value) in blobs:
        arr[y:y + h, x:x + w] = value
    return arr


@pytest.fixture
def fake_clock():
    """Deterministic, strictly increasing ISO timestamps."""
    counter = {"t": 0}

    def tick() -> str:
        counter["t"] += 1
        return f"2026-01-01T00:00:{counter['t'] % 60:02d}.{counter['t']:06d}Z"

    return tick
