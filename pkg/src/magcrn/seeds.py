"""All randomness derives from one run seed plus a fixed text label."""
from __future__ import annotations

import zlib

import numpy as np


def label_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(label.encode())]))
