"""Portable seedable PRNG.

Streams are produced by xoshiro256** whose 256-bit state is filled from the
user seed with splitmix64, exactly as recommended by the xoshiro authors.
Doubles are formed from the top 53 bits: ``(next() >> 11) * 2**-53``.  Any
implementation following these three definitions reproduces the same angle
sequence for augmentation.

Bulk arrays (weight init, GAN noise, shuffles) use numpy's PCG64 seeded from
``numpy_seed``, which is portable across platforms as well.
"""

MASK64 = (1 << 64) - 1


def splitmix64(state):
    """One splitmix64 step; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    def __init__(self, seed):
        state = int(seed) & MASK64
        s = []
        for _ in range(4):
            state, out = splitmix64(state)
            s.append(out)
        self.s = s

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self):
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low, high):
        return low + (high - low) * self.random()


def derive_seed(seed, *tags):
    """Mix integer tags into a seed (splitmix64 chain); used to split streams."""
    state = int(seed) & MASK64
    state, out = splitmix64(state)
    for tag in tags:
        state, out = splitmix64(state ^ (int(tag) & MASK64))
    return out


def numpy_rng(seed, *tags):
    import numpy as np

    return np.random.default_rng(derive_seed(seed, *tags))
