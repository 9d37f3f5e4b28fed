"""Deterministic random-stream derivation for replica-parallel runs.

Streams are keyed by (master seed, replica index, module tag) through a
SHA-256 hash, so distinct replicas and distinct pipeline stages get
independent generators by construction, identical across runs and
indifferent to scheduling order.  The generator family is PCG64 and is
recorded in run manifests.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["GENERATOR", "SEED_SCHEME", "derive_seed", "stream"]

GENERATOR = "PCG64"
SEED_SCHEME = "sha256('{master}|{replica}|{tag}') truncated to 128 bits"


def derive_seed(master, replica, tag):
    """128-bit stream seed derived from the (master, replica, tag) triple."""
    payload = f"{int(master)}|{int(replica)}|{tag}".encode()
    return int.from_bytes(hashlib.sha256(payload).digest()[:16], "big")


def stream(master, replica, tag):
    """Fresh PCG64 generator for one replica of one pipeline stage."""
    return np.random.Generator(np.random.PCG64(derive_seed(master, replica, tag)))
