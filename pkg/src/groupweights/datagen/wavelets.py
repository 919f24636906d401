"""Orthonormal 2-D Haar transform and the quad-tree groups on its coefficients.

Coefficients use the usual nested (Mallat) layout: for a ``2^n x 2^n``
image the approximation coefficient sits at ``(0, 0)`` and the detail
band of orientation ``o`` at scale ``b`` occupies a ``b x b`` block next
to the approximation block of side ``b``.  The vector form is the
row-major flattening of that layout.
"""
import math

import numpy as np

from ..exceptions import StructuralError
from ..model import GroupFamily

_R2 = math.sqrt(2.0)


def _log2_side(side):
    n = int(round(math.log2(side))) if side > 0 else -1
    if n < 0 or 2 ** n != side:
        raise StructuralError(f"side {side} is not a power of two")
    return n


def _check_square(a):
    a = np.asarray(a, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise StructuralError(f"expected square images, got shape {a.shape}")
    return a, _log2_side(a.shape[-1])


def haar2d_forward(image):
    """Orthonormal Haar coefficients of one image or a stack ``(..., m, m)``.

    Returns vectors of length ``m*m`` (shape ``(..., m*m)``).
    """
    x, n = _check_square(image)
    c = x.copy()
    m = x.shape[-1]
    while m > 1:
        blk = c[..., :m, :m]
        lo = (blk[..., 0::2, :] + blk[..., 1::2, :]) / _R2
        hi = (blk[..., 0::2, :] - blk[..., 1::2, :]) / _R2
        rows = np.concatenate([lo, hi], axis=-2)
        lo = (rows[..., 0::2] + rows[..., 1::2]) / _R2
        hi = (rows[..., 0::2] - rows[..., 1::2]) / _R2
        c[..., :m, :m] = np.concatenate([lo, hi], axis=-1)
        m //= 2
    return c.reshape(c.shape[:-2] + (-1,))


def haar2d_inverse(coeffs):
    """Inverse of :func:`haar2d_forward`; accepts ``(..., m*m)`` vectors."""
    coeffs = np.asarray(coeffs, dtype=float)
    side = int(round(math.sqrt(coeffs.shape[-1])))
    if side * side != coeffs.shape[-1]:
        raise StructuralError(f"{coeffs.shape[-1]} coefficients do not form a square image")
    _log2_side(side)
    c = coeffs.reshape(coeffs.shape[:-1] + (side, side)).copy()
    m = 2
    while m <= side:
        h = m // 2
        blk = c[..., :m, :m]
        lo, hi = blk[..., :h], blk[..., h:]
        rows = np.empty_like(blk)
        rows[..., 0::2] = (lo + hi) / _R2
        rows[..., 1::2] = (lo - hi) / _R2
        lo, hi = rows[..., :h, :], rows[..., h:, :]
        out = np.empty_like(blk)
        out[..., 0::2, :] = (lo + hi) / _R2
        out[..., 1::2, :] = (lo - hi) / _R2
        c[..., :m, :m] = out
        m *= 2
    return c


class WaveletTree:
    """Parent structure of the Haar coefficients of a ``2^n x 2^n`` image.

    The three coarsest detail coefficients hang below the approximation
    coefficient, which plays the part of the joint root; every other
    detail coefficient ``(r, c)`` has the four children ``(2r+i, 2c+j)``.
    Nodes are indexed by their position in the flattened coefficient
    vector.
    """

    def __init__(self, depth):
        if depth < 0:
            raise StructuralError("depth must be nonnegative")
        self.depth = int(depth)
        self.side = 2 ** self.depth
        side = self.side
        parent = np.full(side * side, -1, dtype=np.int64)
        for r in range(side):
            for c in range(side):
                if r == 0 and c == 0:
                    continue
                if r < 2 and c < 2:
                    parent[r * side + c] = 0
                else:
                    parent[r * side + c] = (r // 2) * side + c // 2
        parent.setflags(write=False)
        self.parent = parent

    @classmethod
    def for_side(cls, side):
        return cls(_log2_side(side))

    @property
    def n_nodes(self):
        return self.parent.size

    def path(self, node):
        """Root-to-node path as a sorted index array."""
        out = []
        while node >= 0:
            out.append(node)
            node = self.parent[node]
        return np.array(sorted(out), dtype=np.int64)

    def children(self, node):
        return np.flatnonzero(self.parent == node)

    def leaves(self):
        has_child = np.zeros(self.n_nodes, dtype=bool)
        has_child[self.parent[self.parent >= 0]] = True
        return np.flatnonzero(~has_child)

    def node_depth(self):
        d = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            d[i] = self.path(i).size - 1
        return d


def wavelet_path_groups(tree, add_singletons=True):
    """One group per node (its root-to-node path), then missing singletons."""
    groups = [tree.path(i) for i in range(tree.n_nodes)]
    if add_singletons:
        have = {tuple(g.tolist()) for g in groups}
        groups += [[i] for i in range(tree.n_nodes) if (i,) not in have]
    return GroupFamily(groups, tree.n_nodes)
