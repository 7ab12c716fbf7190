"""Named, splittable random streams on the Philox 4x64 counter-based generator.

A stream is identified by a root seed plus a path of names, so the same
(seed, names) pair yields the same numbers regardless of what other streams
were drawn before it.
"""

from __future__ import annotations

import json
import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def seed_sequence(seed: int, *names) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))


def stream(seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed_sequence(seed, *names)))


def derive_seed(seed: int, *names) -> int:
    """A 63-bit integer seed for components that take a plain int."""
    return int(seed_sequence(seed, *names).generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def state_json(gen: np.random.Generator) -> str:
    st = gen.bit_generator.state

    def plain(v):
        if isinstance(v, dict):
            return {k: plain(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return [int(x) for x in v]
        if isinstance(v, np.integer):
            return int(v)
        return v

    return json.dumps(plain(st), sort_keys=True)


def from_state_json(text: str) -> np.random.Generator:
    st = json.loads(text)
    if st.get("bit_generator") != "Philox":
        raise ValueError(f"unsupported generator state {st.get('bit_generator')!r}")
    bg = np.random.Philox()
    st["state"] = {k: np.array(v, dtype=np.uint64) for k, v in st["state"].items()}
    st["buffer"] = np.array(st["buffer"], dtype=np.uint64)
    bg.state = st
    return np.random.Generator(bg)
