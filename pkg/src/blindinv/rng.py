"""Deterministic random streams.

Everything stochastic in this package (weight init, latent draws, mixing
matrices, noise, batch order) pulls from a seeded PCG32 stream so that a
single 64-bit seed pins every experiment bit-for-bit, independent of
platform or numpy version.  Gaussian draws use Box-Muller with a fixed
consumption order; independent sub-streams are derived with splitmix64.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_PCG_MULT = 6364136223846793005
_SM_GAMMA = 0x9E3779B97F4A7C15
_BLOCK = 4096

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 2.0 ** -53


def splitmix64(x: int) -> int:
    """One splitmix64 step: mixes ``x`` into a 64-bit output.

    Used both to expand a user seed into PCG32 state and to derive
    independent per-trial seeds as ``splitmix64(seed + i)``.
    """
    z = (x + _SM_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _lcg_tables(block: int):
    """Jump tables for vectorised PCG32: powers of the multiplier and the
    geometric prefix sums, both mod 2^64."""
    pows = [1]
    sums = [0]
    for k in range(block):
        sums.append((sums[-1] + pows[-1]) & MASK64)
        pows.append((pows[-1] * _PCG_MULT) & MASK64)
    return (
        np.array(pows[:block], dtype=np.uint64),
        np.array(sums[:block], dtype=np.uint64),
        pows,
        sums,
    )


_POWS_NP, _SUMS_NP, _POWS_INT, _SUMS_INT = _lcg_tables(_BLOCK)


class Pcg32:
    """PCG-XSH-RR 64/32 generator with a 64-bit odd increment.

    The state transition is the standard 64-bit LCG; each 32-bit output is
    the xorshift-rotate of the pre-step state.  Blocks of outputs are
    produced vectorised via LCG jump tables, which is bit-identical to
    stepping one draw at a time.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.state = splitmix64(self.seed)
        self.increment = splitmix64(self.state) | 1

    def spawn(self, index: int) -> "Pcg32":
        """Independent stream #``index`` derived from the original seed."""
        return Pcg32(splitmix64((self.seed + index) & MASK64))

    def raw32(self, n: int) -> np.ndarray:
        """Next ``n`` raw 32-bit outputs as a uint32 array."""
        out = np.empty(n, dtype=np.uint32)
        filled = 0
        while filled < n:
            k = min(_BLOCK, n - filled)
            olds = _POWS_NP[:k] * np.uint64(self.state) + _SUMS_NP[:k] * np.uint64(
                self.increment
            )
            xsh = (((olds >> np.uint64(18)) ^ olds) >> np.uint64(27)).astype(np.uint32)
            rot = (olds >> np.uint64(59)).astype(np.uint32)
            out[filled : filled + k] = (xsh >> rot) | (xsh << ((32 - rot) & 31))
            self.state = (
                _POWS_INT[k] * self.state + _SUMS_INT[k] * self.increment
            ) & MASK64
            filled += k
        return out

    def random(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) with full 53-bit resolution (two raw
        draws per double)."""
        raw = self.raw32(2 * n).astype(np.uint64)
        hi = raw[0::2] >> np.uint64(5)
        lo = raw[1::2] >> np.uint64(6)
        return ((hi << np.uint64(26)) | lo).astype(np.float64) * _INV_2_53

    def uniform(self, lo: float, hi: float, shape) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        u = self.random(n)
        return (lo + (hi - lo) * u).reshape(shape)

    def normal(self, mean: float, std: float, shape) -> np.ndarray:
        """Gaussian draws via Box-Muller.

        Consumption order is fixed: ceil(n/2) pairs of uniforms, each pair
        yielding (cos, sin) deviates that are interleaved and truncated to
        ``n``, so a given call sequence always sees the same stream.
        """
        shape = _as_shape(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        pairs = (n + 1) // 2
        u = self.random(2 * pairs)
        u1 = 1.0 - u[0::2]  # in (0, 1]: keeps log finite
        u2 = u[1::2]
        mag = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * pairs)
        z[0::2] = mag * np.cos(_TWO_PI * u2)
        z[1::2] = mag * np.sin(_TWO_PI * u2)
        return (mean + std * z[:n]).reshape(shape)

    def below(self, bound: int) -> int:
        """One integer in [0, bound), unbiased via rejection."""
        if bound <= 0:
            raise ValueError(f"bound must be positive, got {bound}")
        limit = (1 << 32) - ((1 << 32) % bound)
        while True:
            r = int(self.raw32(1)[0])
            if r < limit:
                return r % bound

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def _as_shape(shape) -> tuple:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)
