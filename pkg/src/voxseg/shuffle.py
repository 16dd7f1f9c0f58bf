"""Periodic down-shuffling and up-shuffling of Tensor4 volumes.

Down-shuffling trades spatial resolution for channels: factors (n_x, n_y, n_z)
turn a (n_x*d, n_y*h, n_z*w, C) tensor into (d, h, w, C*n_x*n_y*n_z). It is
the 3-D analog of space-to-depth with this exact index map:

    out(x', y', z', c') = in(x'*n_x + floor(mod(c', n_x*C) / C),
                             y'*n_y + floor(mod(c', n_x*n_y*C) / (n_x*C)),
                             z'*n_z + floor(c' / (n_x*n_y*C)),
                             mod(c', C))

Equivalently, writing c' = c + C*(i + n_x*(j + n_y*k)) with block offsets
(i, j, k), the input channel varies fastest in the output channel axis, then
the x offset, then y, then z. Up-shuffling is defined as the exact inverse
permutation, so a down/up round trip is the identity element for element.

The fast paths apply a single gather through flat index tables cached per
(shape, factors); ``down_shuffle_reference`` keeps a deliberately naive
transcription of the index map for cross-checking.
"""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .tensor import Shape4, Tensor4


class ShuffleFactors(NamedTuple):
    """Positive integer down-shuffling factors per spatial axis."""

    nx: int
    ny: int
    nz: int

    @property
    def product(self) -> int:
        return self.nx * self.ny * self.nz

    def validate(self) -> "ShuffleFactors":
        if min(self) < 1:
            raise ValueError(f"shuffle factors must be >= 1, got {tuple(self)}")
        return self


def _check_divisible(shape: Shape4, factors: ShuffleFactors) -> tuple[int, int, int]:
    nx, ny, nz = factors
    if shape.x % nx or shape.y % ny or shape.z % nz:
        raise ValueError(
            f"spatial extents {shape.spatial} not divisible by factors {tuple(factors)}"
        )
    return shape.x // nx, shape.y // ny, shape.z // nz


@lru_cache(maxsize=256)
def _down_perm(x: int, y: int, z: int, c: int, nx: int, ny: int, nz: int) -> np.ndarray:
    """Flat gather table: output offset o reads input offset table[o]."""
    d, h, w = x // nx, y // ny, z // nz
    offsets = np.arange(x * y * z * c, dtype=np.int64).reshape(z, y, x, c)
    # split each spatial axis into (coarse, block offset), then order the
    # output channel axis as (k, j, i, c) slowest to fastest
    blocks = offsets.reshape(w, nz, h, ny, d, nx, c)
    gathered = blocks.transpose(0, 2, 4, 1, 3, 5, 6)
    return np.ascontiguousarray(gathered).reshape(-1)


@lru_cache(maxsize=256)
def _up_perm(x: int, y: int, z: int, c: int, nx: int, ny: int, nz: int) -> np.ndarray:
    """Inverse of the down table for the same high-resolution geometry."""
    forward = _down_perm(x, y, z, c, nx, ny, nz)
    inverse = np.empty_like(forward)
    inverse[forward] = np.arange(forward.size, dtype=np.int64)
    return inverse


def down_shuffle(t: Tensor4, factors: ShuffleFactors) -> Tensor4:
    """Periodic down-shuffle: (n_x*d, n_y*h, n_z*w, C) -> (d, h, w, C*n_x*n_y*n_z)."""
    factors = ShuffleFactors(*factors).validate()
    d, h, w = _check_divisible(t.shape, factors)
    perm = _down_perm(*t.shape, *factors)
    out_shape = Shape4(d, h, w, t.shape.c * factors.product)
    return Tensor4(t.flat[perm].reshape(out_shape.z, out_shape.y, out_shape.x, out_shape.c))


def up_shuffle(t: Tensor4, factors: ShuffleFactors) -> Tensor4:
    """Exact inverse of :func:`down_shuffle`; expands channels back into space."""
    factors = ShuffleFactors(*factors).validate()
    if t.shape.c % factors.product:
        raise ValueError(
            f"channel count {t.shape.c} not divisible by factor product {factors.product}"
        )
    c = t.shape.c // factors.product
    x, y, z = t.shape.x * factors.nx, t.shape.y * factors.ny, t.shape.z * factors.nz
    perm = _up_perm(x, y, z, c, *factors)
    return Tensor4(t.flat[perm].reshape(z, y, x, c))


def down_shuffle_adjoint(grad_out: Tensor4, factors: ShuffleFactors) -> Tensor4:
    """Backward map of down_shuffle; a permutation's adjoint is its inverse."""
    return up_shuffle(grad_out, factors)


def up_shuffle_adjoint(grad_out: Tensor4, factors: ShuffleFactors) -> Tensor4:
    return down_shuffle(grad_out, factors)


def down_shuffle_reference(t: Tensor4, factors: ShuffleFactors) -> Tensor4:
    """Naive per-element transcription of the index map. Oracle only.

    Kept loop-shaped and separate from the gather path on purpose; do not
    "optimize" this function.
    """
    factors = ShuffleFactors(*factors).validate()
    nx, ny, nz = factors
    d, h, w = _check_divisible(t.shape, factors)
    C = t.shape.c
    c_out = C * nx * ny * nz
    out = np.empty((w, h, d, c_out))
    for zp in range(w):
        for yp in range(h):
            for xp in range(d):
                for cp in range(c_out):
                    sx = xp * nx + (cp % (nx * C)) // C
                    sy = yp * ny + (cp % (nx * ny * C)) // (nx * C)
                    sz = zp * nz + cp // (nx * ny * C)
                    sc = cp % C
                    out[zp, yp, xp, cp] = t.at(sx, sy, sz, sc)
    return Tensor4(out)
