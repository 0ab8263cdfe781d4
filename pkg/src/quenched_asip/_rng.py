"""Counter-based uniform streams.

Every draw is a pure function of ``(key, index)``: the index selects a
Philox counter block, so arbitrary windows (including negative indices)
can be produced without replaying a sequential state.
"""

import numpy as np

_OFFSET = 1 << 63
_MASK64 = (1 << 64) - 1


def _counter_words(index):
    c = (int(index) + _OFFSET) & ((1 << 256) - 1)
    return [(c >> (64 * w)) & _MASK64 for w in range(4)]


def raw_blocks(key, start, count):
    """Return the first 64-bit word of Philox blocks ``start .. start+count-1``.

    ``key`` is folded into the 128-bit Philox key; ``start`` may be negative.
    """
    if count <= 0:
        return np.empty(0, dtype=np.uint64)
    key = int(key) & ((1 << 128) - 1)
    bitgen = np.random.Philox(key=key, counter=np.array(_counter_words(start - 1), dtype=np.uint64))
    # Philox increments the counter before producing a block; a plain list of
    # large ints would be routed through float64 and lose low bits.
    return bitgen.random_raw(4 * count).reshape(count, 4)[:, 0]


def uniforms(key, start, count):
    """Uniform doubles in [0, 1), one per index in ``start .. start+count-1``."""
    raw = raw_blocks(key, start, count)
    return (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


def derive_key(seed, *tags):
    """Mix integer tags into a seed, giving an independent stream key."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 128) - 1), spawn_key=tuple(int(t) for t in tags))
    words = ss.generate_state(2, dtype=np.uint64)
    return int(words[0]) | (int(words[1]) << 64)
