"""Exact pairwise decision boundaries of the linear tail.

Every pair of classes (i, j) with i < j contributes one hyperplane
w_(i,j)·v + b_(i,j) = 0 in representation space, where w_(i,j) and
b_(i,j) are differences of tail weight rows and biases.  Because the tail
is exactly linear, these are the classifier's true boundaries, not fits:
the K regions they carve out coincide with the argmax of the logits.

Sign convention: the pairwise value F and the signed distance D are
positive on the side where class ``y`` beats class ``k``.  Descending D
therefore moves toward the boundary from the correctly-classified side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateBoundaryError(ValueError):
    """Two classes share an identical tail row, so their boundary is
    undefined (zero normal vector)."""


@dataclass(frozen=True)
class OnBoundary:
    """Region label for a point within tie tolerance of some boundary."""

    pair: tuple
    value: float


@dataclass(frozen=True, eq=False)
class BoundarySet:
    """All C(K,2) pairwise boundaries of one linear tail.

    ``rows[p]`` and ``biases[p]`` describe the hyperplane of ``pairs[p]``
    = (i, j) with i < j; the value for the reversed pair is the exact
    negation.  Immutable; safe for concurrent reads.
    """

    k: int
    pairs: tuple
    rows: np.ndarray
    biases: np.ndarray
    norms: np.ndarray
    # (K, K) lookup tables: row index and orientation sign for (i, j).
    _pair_of: np.ndarray = field(repr=False)
    _sign_of: np.ndarray = field(repr=False)

    @property
    def n(self):
        return self.rows.shape[1]

    def pair_index(self, i, j):
        """Row index for unordered pair {i, j}."""
        if i == j:
            raise ValueError(f"({i}, {j}) is not a class pair")
        return int(self._pair_of[i, j])

    def signed_row(self, i, j):
        """(w, b, ‖w‖₂) of the hyperplane oriented so F(v) = z_i − z_j."""
        p = self.pair_index(i, j)
        s = float(self._sign_of[i, j])
        return s * self.rows[p], s * self.biases[p], self.norms[p]

    def signed_rows(self, i, j):
        """Vectorized :meth:`signed_row`: (rows, biases, norms) arrays."""
        i = np.asarray(i)
        j = np.asarray(j)
        p = self._pair_of[i, j]
        s = self._sign_of[i, j]
        return s[:, None] * self.rows[p], s * self.biases[p], self.norms[p]


def build_boundary_set(w, b):
    """Build every pairwise boundary from tail weights (K, N) and biases.

    Rejects K < 2, shape mismatches, and degenerate pairs (identical
    weight rows), naming the offending pair.
    """
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError(f"tail weights must be 2-D (K, N), got shape {w.shape}")
    k = w.shape[0]
    if k < 2:
        raise ValueError(f"need at least 2 classes to form boundaries, got K={k}")
    if b.shape != (k,):
        raise ValueError(f"bias must have shape ({k},), got {b.shape}")
    pairs = [(i, j) for i in range(k) for j in range(i + 1, k)]
    ii = np.array([p[0] for p in pairs])
    jj = np.array([p[1] for p in pairs])
    rows = w[ii] - w[jj]
    biases = b[ii] - b[jj]
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0.0):
        p = int(np.argmin(norms))
        raise DegenerateBoundaryError(
            f"classes {pairs[p][0]} and {pairs[p][1]} have identical tail "
            f"weight rows; their boundary has no normal direction"
        )
    pair_of = np.zeros((k, k), dtype=np.int64)
    sign_of = np.zeros((k, k))
    for p, (i, j) in enumerate(pairs):
        pair_of[i, j] = pair_of[j, i] = p
        sign_of[i, j] = 1.0
        sign_of[j, i] = -1.0
    return BoundarySet(k=k, pairs=tuple(pairs), rows=rows, biases=biases,
                       norms=norms, _pair_of=pair_of, _sign_of=sign_of)


def boundary_set_for(clf):
    """Boundary set of a classifier's tail."""
    return build_boundary_set(*clf.tail_weights())


def _check_pair(bs, i, j):
    if i == j:
        raise ValueError(f"class pair ({i}, {j}) is not a boundary: i == j")
    if not (0 <= i < bs.k and 0 <= j < bs.k):
        raise ValueError(f"class pair ({i}, {j}) out of range for K={bs.k}")


def decision_value(bs, v, i, j):
    """Pairwise value F(v) = z_i − z_j = w_(i,j)·v + b_(i,j).

    Positive iff class i beats class j at v.  Exactly antisymmetric:
    the (j, i) value is computed as the negation of the stored (i, j) row.
    """
    _check_pair(bs, i, j)
    v = np.asarray(v, dtype=np.float64)
    p = bs.pair_index(i, j)
    val = float(bs.rows[p] @ v + bs.biases[p])
    return val if i < j else -val


def pair_values(bs, v_batch):
    """All pairwise values for a batch: shape (B, C(K,2)), pair order."""
    v = np.atleast_2d(np.asarray(v_batch, dtype=np.float64))
    return v @ bs.rows.T + bs.biases


def region_of(bs, v, tie_tol=1e-9):
    """Class region containing v, or an :class:`OnBoundary` marker.

    Returns k when F_(k,j)(v) > tie_tol for every j ≠ k.  If any pairwise
    value lies within tie_tol of zero the point is reported as on that
    boundary rather than silently assigned.
    """
    vals = pair_values(bs, v)[0]
    near = np.abs(vals) <= tie_tol
    if np.any(near):
        p = int(np.argmax(near))
        return OnBoundary(pair=bs.pairs[p], value=float(vals[p]))
    g = _antisym_matrix(bs, vals)
    wins = (g > tie_tol) | np.eye(bs.k, dtype=bool)
    winners = np.flatnonzero(wins.all(axis=1))
    if len(winners) != 1:
        raise RuntimeError(
            f"inconsistent region assignment for v={v!r}: {winners}"
        )
    return int(winners[0])


def _antisym_matrix(bs, vals):
    g = np.zeros((bs.k, bs.k))
    for p, (i, j) in enumerate(bs.pairs):
        g[i, j] = vals[p]
        g[j, i] = -vals[p]
    return g


def region_of_batch(bs, v_batch, tie_tol=1e-9):
    """Vectorized region query: int labels, −1 where any pair ties."""
    vals = pair_values(bs, v_batch)
    b, p = vals.shape
    onehot_i = np.zeros((p, bs.k))
    onehot_j = np.zeros((p, bs.k))
    for q, (i, j) in enumerate(bs.pairs):
        onehot_i[q, i] = 1.0
        onehot_j[q, j] = 1.0
    wins = (vals > tie_tol) @ onehot_i + (vals < -tie_tol) @ onehot_j
    labels = np.argmax(wins, axis=1)
    complete = wins[np.arange(b), labels] == bs.k - 1
    tied = np.any(np.abs(vals) <= tie_tol, axis=1)
    return np.where(complete & ~tied, labels, -1)


def signed_distance(bs, v, y, k):
    """Signed Euclidean distance from v to the (y, k) boundary.

    Positive on the side where y beats k; magnitude is the exact
    point-to-hyperplane distance.
    """
    _check_pair(bs, y, k)
    w, b, norm = bs.signed_row(y, k)
    if norm == 0.0:
        raise DegenerateBoundaryError(
            f"classes {y} and {k} have identical tail rows"
        )
    v = np.asarray(v, dtype=np.float64)
    return float((w @ v + b) / norm)


def _signed_distances_to_all(bs, v_batch, y):
    """Distances D(v, y, n) for all n; column y is +inf as a mask."""
    vals = pair_values(bs, v_batch)
    b = vals.shape[0]
    y = np.broadcast_to(np.asarray(y), (b,))
    dist = np.full((b, bs.k), np.inf)
    for p, (i, j) in enumerate(bs.pairs):
        d = vals[:, p] / bs.norms[p]
        sel = y == i
        if np.any(sel):
            dist[sel, j] = d[sel]
        sel = y == j
        if np.any(sel):
            dist[sel, i] = -d[sel]
    return dist


def nearest_boundary(bs, v, y):
    """Class m ≠ y whose boundary is nearest by signed distance.

    Minimizes D(v, y, n) over n; ties break to the smallest class index.
    Returns (m, distance).
    """
    if not 0 <= y < bs.k:
        raise ValueError(f"label {y} out of range for K={bs.k}")
    dist = _signed_distances_to_all(bs, v, y)[0]
    m = int(np.argmin(dist))
    return m, float(dist[m])


def nearest_boundary_batch(bs, v_batch, y):
    """Batched :func:`nearest_boundary`: arrays (m, distance)."""
    dist = _signed_distances_to_all(bs, v_batch, y)
    m = np.argmin(dist, axis=1)
    return m, dist[np.arange(dist.shape[0]), m]


def distance_gradient(c, bs, x, y, m):
    """∇ₓ of the signed distance D(v, y, m) with v = head(x).

    The representation-space gradient of D is the constant unit normal
    w_(y,m)/‖w_(y,m)‖₂; it is back-propagated through the head with m
    held fixed.
    """
    return distance_gradient_batch(
        c, bs, np.asarray(x, dtype=np.float64)[None], [y], [m]
    )[0]


def distance_gradient_batch(c, bs, x_batch, y, m):
    """Batched :func:`distance_gradient` with per-example (y, m)."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    b = x_batch.shape[0]
    y = np.broadcast_to(np.asarray(y), (b,))
    m = np.broadcast_to(np.asarray(m), (b,))
    _, ctxs = c.head_forward_with_ctx(x_batch, train=False)
    rows, _, norms = bs.signed_rows(y, m)
    return c.head_backward(ctxs, rows / norms[:, None])


def boundary_rows_csv(bs):
    """CSV text of every boundary: pair_i, pair_j, N weights, bias."""
    n = bs.n
    header = "pair_i,pair_j," + ",".join(f"w{c}" for c in range(n)) + ",bias"
    lines = [header]
    for p, (i, j) in enumerate(bs.pairs):
        cells = [str(i), str(j)]
        cells += [repr(float(x)) for x in bs.rows[p]]
        cells.append(repr(float(bs.biases[p])))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
