"""SplitMix64 pseudo-random generator.

Every stochastic choice in the lab (parameter init, SpecAugment masks,
simulator sampling, shuffling) draws from this generator so that runs are
reproducible across platforms and implementations.
"""

import math

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z):
    """SplitMix64 output finalizer on a Python int."""
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class Rng:
    """Single-owner SplitMix64 stream.

    Scalar draws and the vectorised ``*_array`` draws consume the same
    stream: ``random_array(n)`` returns exactly the next ``n`` values that
    ``n`` calls to ``random()`` would have produced.
    """

    def __init__(self, seed=0):
        self.seed = int(seed) & MASK64
        self.state = self.seed

    def __repr__(self):
        return f"Rng(seed={self.seed}, state={self.state:#018x})"

    def next_u64(self):
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def u64_array(self, n):
        n = int(n)
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.state) + steps * np.uint64(GAMMA)
            out = _mix64_array(states)
        self.state = (self.state + n * GAMMA) & MASK64
        return out

    def random(self):
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * _INV_2_53

    def random_array(self, n):
        return (self.u64_array(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def uniform(self, low, high):
        return low + (high - low) * self.random()

    def uniform_array(self, n, low, high):
        return low + (high - low) * self.random_array(n)

    def randint(self, low, high):
        """Integer uniform on the closed range [low, high]."""
        if high < low:
            raise ValueError(f"empty range [{low}, {high}]")
        span = high - low + 1
        return low + min(int(self.random() * span), span - 1)

    def exponential(self, mean):
        return -mean * math.log1p(-self.random())

    def normal_array(self, n):
        """Standard normal draws via Box-Muller; consumes 2*ceil(n/2) values."""
        pairs = (n + 1) // 2
        u = self.random_array(2 * pairs)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * math.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def choice(self, items):
        if len(items) == 0:
            raise ValueError("choice from empty sequence")
        return items[self.randint(0, len(items) - 1)]

    def sample(self, items, k):
        """k distinct items, uniformly without replacement (partial Fisher-Yates)."""
        pool = list(items)
        if k > len(pool):
            raise ValueError(f"cannot sample {k} from {len(pool)} items")
        for i in range(k):
            j = self.randint(i, len(pool) - 1)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, items):
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(0, i)
            items[i], items[j] = items[j], items[i]
        return items

    def spawn(self, index):
        """Child generator keyed by (original seed, index), independent of draws so far."""
        return Rng(mix64((self.seed ^ mix64((index + 1) * GAMMA & MASK64)) & MASK64))
