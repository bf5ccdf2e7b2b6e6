"""Reproducible random streams.

The stream algorithm is fixed so that outputs do not depend on the numpy
version or platform:

* raw bits: Philox4x64-10 keyed by ``(seed, stream)`` with a zero initial
  counter, read through ``numpy.random.Philox.random_raw`` (numpy guarantees
  raw bit-generator output is stable across releases);
* uniforms: ``u = ((w >> 11) + 0.5) * 2**-53``, strictly inside (0, 1);
* normals: Box-Muller on consecutive uniform pairs ``(u1, u2)`` giving
  ``sqrt(-2 log u1) cos(2 pi u2)`` then ``sqrt(-2 log u1) sin(2 pi u2)``;
  an odd request discards the unused sine value;
* integers in ``[0, n)``: ``floor(u * n)``.
"""

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_M53 = 2.0**-53


class RngStream:
    """Single-owner counter-based random stream.

    ``position`` counts the 64-bit words consumed so far. Parallel chains
    should use :meth:`spawn` (or distinct seeds), never share one stream.
    """

    def __init__(self, seed, stream=0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._bitgen = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self.position = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, position={self.position})"

    def spawn(self, index):
        """Independent stream for chain ``index`` sharing this seed."""
        return RngStream(self.seed, self.stream + 1 + int(index))

    def raw(self, n):
        n = int(n)
        if n <= 0:
            return np.empty(0, dtype=np.uint64)
        words = self._bitgen.random_raw(n)
        self.position += n
        return np.asarray(words, dtype=np.uint64)

    def uniform(self, shape=()):
        size = int(np.prod(shape, dtype=np.int64))
        u = ((self.raw(size) >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
        return u.reshape(shape)

    def normal(self, shape=()):
        size = int(np.prod(shape, dtype=np.int64))
        pairs = (size + 1) // 2
        u = self.uniform((pairs, 2))
        r = np.sqrt(-2.0 * np.log(u[:, 0]))
        theta = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(theta)
        z[:, 1] = r * np.sin(theta)
        return z.reshape(-1)[:size].reshape(shape)

    def integers(self, n, shape=()):
        if n < 1:
            raise ValueError("n must be >= 1")
        return np.floor(self.uniform(shape) * n).astype(np.int64)
