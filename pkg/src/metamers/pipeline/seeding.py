"""Named random substreams derived from one run seed."""
from __future__ import annotations

import hashlib

import numpy as np
import torch

STREAMS = ("data", "references", "training", "init", "pairs", "montecarlo")


def substream_seed(seed: int, name: str) -> int:
    """63-bit seed from ``sha256("<seed>:<name>")``; streams never share state."""
    digest = hashlib.sha256(f"{int(seed)}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def numpy_stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(seed, name))


def torch_stream(seed: int, name: str) -> torch.Generator:
    return torch.Generator().manual_seed(substream_seed(seed, name))


def set_deterministic(enabled: bool) -> None:
    torch.use_deterministic_algorithms(enabled)
    torch.backends.cudnn.benchmark = not enabled
