"""Keyed deterministic random streams.

Every random draw in the package descends from a single master seed through
named substreams: ``stream(master, "purpose", case_id, index)``. Streams with
different keys are independent Philox generators, so work can be parallelized
or reordered without changing any result.
"""

from __future__ import annotations

import hashlib

import numpy as np

_SEP = b"\x1f"


def stream(*key: int | str) -> np.random.Generator:
    """Return a Generator keyed by the given (int | str) parts.

    The key is hashed to a 128-bit Philox key, so identical keys give
    bit-identical streams on every platform and run.
    """
    parts = []
    for part in key:
        if isinstance(part, (bool, np.bool_)):
            raise TypeError("bool key parts are ambiguous; use int or str")
        if isinstance(part, (int, np.integer)):
            parts.append(b"i" + str(int(part)).encode())
        elif isinstance(part, str):
            parts.append(b"s" + part.encode("utf-8"))
        else:
            raise TypeError(f"stream key parts must be int or str, got {type(part)!r}")
    digest = hashlib.sha256(_SEP.join(parts)).digest()
    philox_key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=philox_key))


def uniform(gen: np.random.Generator, n: int | None = None):
    """Uniform draws in [0, 1); thin alias so all samplers read alike."""
    return gen.random() if n is None else gen.random(n)


def bernoulli(gen: np.random.Generator, p: float) -> int:
    """One Bernoulli draw by inverse CDF on a single uniform."""
    return 1 if gen.random() < p else 0


def categorical(gen: np.random.Generator, probs) -> int:
    """One categorical draw by inverse CDF on a single uniform."""
    u = gen.random()
    acc = 0.0
    probs = np.asarray(probs, dtype=float)
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1


def normal_pair(gen: np.random.Generator) -> tuple[float, float]:
    """Two independent standard normals by Box-Muller on two uniforms."""
    u1 = 1.0 - gen.random()  # (0, 1]: keeps log() finite
    u2 = gen.random()
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


def normal(gen: np.random.Generator) -> float:
    """One standard normal draw (consumes two uniforms)."""
    return normal_pair(gen)[0]


def exponential(gen: np.random.Generator, mean: float) -> float:
    """One exponential draw with the given mean."""
    return -mean * np.log(1.0 - gen.random())
