"""Histogram dissimilarity measures, bin-by-bin and cross-bin.

Every measure takes two equal-length non-negative vectors (raw arrays or
FeatureHistogram) and returns a scalar dissimilarity, 0 for identical
inputs.  Measures are addressable by string id for CLI flags and model
files: euclidean | minkowski:r | kl | jeffrey | chi2 | chi2sym |
bhattacharyya | emd | match.

Logarithms are natural throughout.  Zero-bin conventions: 0*log(.) = 0,
the chi-square denominator skips empty reference bins, and KL floors the
second argument at a small epsilon.
"""

from __future__ import annotations

import math
from typing import Callable, Tuple

import numpy as np

# Saturating stand-in for +inf so that rankings stay total.
INFINITE_DISTANCE = float(np.finfo(np.float64).max)

_KL_EPSILON = 1e-10
_MASS_TOLERANCE = 1e-9


def _vec(h) -> np.ndarray:
    bins = getattr(h, "bins", None)
    a = np.asarray(bins if bins is not None else h, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError(f"expected a 1-D histogram, got shape {a.shape}")
    return a


def _pair(h, k) -> Tuple[np.ndarray, np.ndarray]:
    a, b = _vec(h), _vec(k)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def _require_normalized(a: np.ndarray, b: np.ndarray, measure: str) -> None:
    for name, v in (("first", a), ("second", b)):
        if abs(v.sum() - 1.0) > _MASS_TOLERANCE:
            raise ValueError(
                f"{measure} requires L1-normalized inputs; {name} sums to {v.sum()!r}"
            )


def minkowski(h, k, r: float = 2.0) -> float:
    """(sum |H_i - K_i|^r)^(1/r); r=2 is the Euclidean distance."""
    if r < 1:
        raise ValueError(f"order r must be >= 1, got {r}")
    a, b = _pair(h, k)
    d = np.abs(a - b)
    if r == 1.0:
        return float(d.sum())
    return float((d**r).sum() ** (1.0 / r))


def euclidean(h, k) -> float:
    return minkowski(h, k, 2.0)


def kullback_leibler(h, k, epsilon: float = _KL_EPSILON, printed_form: bool = False) -> float:
    """Relative entropy sum H_i*log(H_i / K_i), asymmetric.

    ``printed_form`` drops the H_i weight (sum log(H_i/K_i) over bins
    with H_i > 0), kept only for comparison purposes.
    """
    a, b = _pair(h, k)
    _require_normalized(a, b, "kullback_leibler")
    mask = a > 0
    ratio = a[mask] / np.maximum(b[mask], epsilon)
    if printed_form:
        return float(np.log(ratio).sum())
    return float((a[mask] * np.log(ratio)).sum())


def jeffrey(h, k) -> float:
    """Symmetrized divergence against the midpoint distribution."""
    a, b = _pair(h, k)
    m = a + b
    out = 0.0
    mask_a = a > 0
    out += float((a[mask_a] * np.log(2.0 * a[mask_a] / m[mask_a])).sum())
    mask_b = b > 0
    out += float((b[mask_b] * np.log(2.0 * b[mask_b] / m[mask_b])).sum())
    return out


def chi_square(h, k, symmetric: bool = False) -> float:
    """sum (H_i-K_i)^2 / H_i over bins with H_i > 0 (asymmetric form).

    The symmetric variant divides by (H_i+K_i)/2 instead, matching the
    chi-square kernel's measure.
    """
    a, b = _pair(h, k)
    diff2 = (a - b) ** 2
    if symmetric:
        denom = 0.5 * (a + b)
    else:
        denom = a
    mask = denom > 0
    return float((diff2[mask] / denom[mask]).sum())


def bhattacharyya(h, k) -> float:
    """-ln sum sqrt(H_i*K_i); disjoint supports saturate to a finite sentinel."""
    a, b = _pair(h, k)
    _require_normalized(a, b, "bhattacharyya")
    coeff = float(np.sqrt(a * b).sum())
    if coeff <= 0.0:
        return INFINITE_DISTANCE
    # roundoff can push the coefficient a hair above 1 for identical inputs
    return max(0.0, -math.log(min(coeff, 1.0)))


def match_distance(h, k) -> float:
    """L1 distance between cumulative histograms; requires equal masses."""
    a, b = _pair(h, k)
    if abs(a.sum() - b.sum()) > _MASS_TOLERANCE:
        raise ValueError(
            f"match_distance requires equal total mass: {a.sum()!r} vs {b.sum()!r}"
        )
    return float(np.abs(np.cumsum(a) - np.cumsum(b)).sum())


# ---------------------------------------------------------------------------
# Earth mover's distance via the transportation simplex
# ---------------------------------------------------------------------------

def linear_ground_distance(n: int) -> np.ndarray:
    """Ground matrix d_ij = |i - j| for 1-D histograms over n bins."""
    idx = np.arange(n)
    return np.abs(idx[:, None] - idx[None, :]).astype(np.float64)


def _check_ground(ground: np.ndarray, n: int) -> np.ndarray:
    g = np.asarray(ground, dtype=np.float64)
    if g.shape != (n, n):
        raise ValueError(f"ground matrix must be {n}x{n}, got {g.shape}")
    if (g < 0).any() or np.abs(np.diag(g)).max(initial=0.0) > 0 or not np.allclose(g, g.T):
        raise ValueError("ground matrix must be symmetric, non-negative, zero diagonal")
    return g


def emd(h, k, ground=None) -> Tuple[float, np.ndarray]:
    """Minimal-cost mass transport between two histograms.

    Returns (cost / total_flow, flow matrix), where total flow is
    min(sum H, sum K); masses may differ (partial matching).  The flow
    matrix row sums never exceed H, column sums never exceed K.
    """
    a, b = _pair(h, k)
    n = a.size
    ground = linear_ground_distance(n) if ground is None else _check_ground(ground, n)
    sum_a, sum_b = float(a.sum()), float(b.sum())
    if sum_a <= 0 or sum_b <= 0:
        raise ValueError("both histograms need positive total mass")
    total_flow = min(sum_a, sum_b)

    # Balance with a zero-cost dummy node absorbing the mass surplus, which
    # turns the partial-match problem into a standard transportation problem.
    supply = a.copy()
    demand = b.copy()
    cost = ground
    surplus = sum_a - sum_b
    if surplus > 0:
        demand = np.append(demand, surplus)
        cost = np.hstack([cost, np.zeros((n, 1))])
    elif surplus < 0:
        supply = np.append(supply, -surplus)
        cost = np.vstack([cost, np.zeros((1, n))])

    flow = _transportation_simplex(supply, demand, cost)[:n, :n]
    return float((ground * flow).sum() / total_flow), flow


def _northwest_corner(supply: np.ndarray, demand: np.ndarray):
    """Initial basic feasible solution with exactly m+n-1 basic cells."""
    m, n = supply.size, demand.size
    flow = np.zeros((m, n))
    basis = []
    s = supply.copy()
    d = demand.copy()
    i = j = 0
    while True:
        q = min(s[i], d[j])
        flow[i, j] = q
        basis.append((i, j))
        s[i] -= q
        d[j] -= q
        if i == m - 1 and j == n - 1:
            break
        # advance exactly one index per cell so the basis keeps m+n-1 cells
        if s[i] <= d[j]:
            i, j = (i + 1, j) if i < m - 1 else (i, j + 1)
        else:
            i, j = (i, j + 1) if j < n - 1 else (i + 1, j)
    return flow, basis


def _transportation_simplex(supply, demand, cost, tol: float = 1e-12) -> np.ndarray:
    """Solve the balanced transportation problem min sum c_ij f_ij.

    Classic MODI method: start from the northwest-corner solution, then
    repeatedly price out non-basic cells with the dual variables and
    pivot along the unique basis cycle until no negative reduced cost
    remains.
    """
    supply = np.asarray(supply, dtype=np.float64)
    demand = np.asarray(demand, dtype=np.float64)
    if abs(supply.sum() - demand.sum()) > 1e-6 * max(1.0, supply.sum()):
        raise ValueError("transportation problem must be balanced")
    m, n = supply.size, demand.size
    flow, basis = _northwest_corner(supply, demand)
    basis_set = set(basis)

    max_pivots = 50 * (m + n) ** 2 + 1000
    for _ in range(max_pivots):
        # dual variables from u_i + v_j = c_ij on basic cells (tree walk)
        u = np.full(m, np.nan)
        v = np.full(n, np.nan)
        u[0] = 0.0
        rows_of_col = {}
        cols_of_row = {}
        for (bi, bj) in basis:
            cols_of_row.setdefault(bi, []).append(bj)
            rows_of_col.setdefault(bj, []).append(bi)
        stack = [("r", 0)]
        while stack:
            kind, idx = stack.pop()
            if kind == "r":
                for bj in cols_of_row.get(idx, ()):
                    if np.isnan(v[bj]):
                        v[bj] = cost[idx, bj] - u[idx]
                        stack.append(("c", bj))
            else:
                for bi in rows_of_col.get(idx, ()):
                    if np.isnan(u[bi]):
                        u[bi] = cost[bi, idx] - v[idx]
                        stack.append(("r", bi))
        # a proper basis spans every row and column
        if np.isnan(u).any() or np.isnan(v).any():
            raise RuntimeError("transportation basis lost connectivity")

        reduced = cost - u[:, None] - v[None, :]
        for (bi, bj) in basis:
            reduced[bi, bj] = 0.0
        enter = np.unravel_index(np.argmin(reduced), reduced.shape)
        if reduced[enter] >= -tol:
            return flow

        cycle = _find_cycle(basis, enter)
        # alternate +/- starting at the entering cell
        minus_cells = cycle[1::2]
        theta_idx = min(
            range(len(minus_cells)), key=lambda t: (flow[minus_cells[t]], minus_cells[t])
        )
        theta = flow[minus_cells[theta_idx]]
        for t, cell in enumerate(cycle):
            flow[cell] += theta if t % 2 == 0 else -theta
        leaving = minus_cells[theta_idx]
        flow[leaving] = 0.0
        basis_set.discard(leaving)
        basis_set.add(enter)
        basis = sorted(basis_set)
    raise RuntimeError("transportation simplex failed to converge")


def _find_cycle(basis, enter):
    """Unique alternating cycle created by adding `enter` to the basis tree.

    Returned as a cell list starting at `enter`, alternating row moves and
    column moves.
    """
    cols_of_row = {}
    rows_of_col = {}
    for (bi, bj) in basis:
        cols_of_row.setdefault(bi, []).append(bj)
        rows_of_col.setdefault(bj, []).append(bi)

    start_row, target_col = enter
    # path in the bipartite basis graph from row start_row to column target_col
    parent = {("r", start_row): None}
    queue = [("r", start_row)]
    while queue:
        node = queue.pop(0)
        kind, idx = node
        if kind == "r":
            for bj in cols_of_row.get(idx, ()):
                nxt = ("c", bj)
                if nxt not in parent:
                    parent[nxt] = node
                    queue.append(nxt)
        else:
            for bi in rows_of_col.get(idx, ()):
                nxt = ("r", bi)
                if nxt not in parent:
                    parent[nxt] = node
                    queue.append(nxt)
    node = ("c", target_col)
    if node not in parent:
        raise RuntimeError("entering cell closes no cycle; basis is not a tree")
    path = []
    while node is not None:
        path.append(node)
        node = parent[node]
    path.reverse()  # row start_row ... col target_col
    cells = [enter]
    for a, b in zip(path, path[1:]):
        (ka, ia), (kb, ib) = a, b
        cells.append((ia, ib) if ka == "r" else (ib, ia))
    return cells


# ---------------------------------------------------------------------------
# Measure registry
# ---------------------------------------------------------------------------

def get_measure(measure_id: str) -> Callable[..., float]:
    """Resolve a measure id to a scalar-valued callable of (H, K).

    `minkowski:r` parses the order; bare `minkowski` means r=2.  `emd`
    uses the linear |i-j| ground distance and returns only the cost.
    """
    mid = measure_id.strip().lower()
    if mid == "euclidean":
        return euclidean
    if mid.startswith("minkowski"):
        r = float(mid.split(":", 1)[1]) if ":" in mid else 2.0
        return lambda h, k: minkowski(h, k, r)
    if mid == "kl":
        return kullback_leibler
    if mid == "jeffrey":
        return jeffrey
    if mid == "chi2":
        return chi_square
    if mid == "chi2sym":
        return lambda h, k: chi_square(h, k, symmetric=True)
    if mid == "bhattacharyya":
        return bhattacharyya
    if mid == "emd":
        return lambda h, k: emd(h, k)[0]
    if mid == "match":
        return match_distance
    raise ValueError(f"unknown measure id {measure_id!r}")


def pairwise_distances(measure_id: str, queries: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """Distance matrix (len(queries), len(gallery)) under the named measure.

    Vectorized for the bin-by-bin measures used in batch classification;
    cross-bin measures fall back to a scalar loop.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    g = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if q.shape[1] != g.shape[1]:
        raise ValueError(f"dimension mismatch: {q.shape[1]} vs {g.shape[1]}")
    mid = measure_id.strip().lower()

    if mid == "euclidean" or mid in ("minkowski", "minkowski:2", "minkowski:2.0"):
        qq = (q * q).sum(axis=1)[:, None]
        gg = (g * g).sum(axis=1)[None, :]
        d2 = np.maximum(qq + gg - 2.0 * q @ g.T, 0.0)
        return np.sqrt(d2)
    if mid.startswith("minkowski"):
        r = float(mid.split(":", 1)[1]) if ":" in mid else 2.0
        diff = np.abs(q[:, None, :] - g[None, :, :])
        if r == 1.0:
            return diff.sum(axis=2)
        return (diff**r).sum(axis=2) ** (1.0 / r)
    if mid == "jeffrey":
        out = np.zeros((q.shape[0], g.shape[0]))
        for i in range(q.shape[0]):
            a = q[i][None, :]
            m = a + g
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = np.where(a > 0, a * np.log(np.where(a > 0, 2 * a, 1) / np.where(m > 0, m, 1)), 0.0)
                tb = np.where(g > 0, g * np.log(np.where(g > 0, 2 * g, 1) / np.where(m > 0, m, 1)), 0.0)
            out[i] = (ta + tb).sum(axis=1)
        return out
    if mid == "bhattacharyya":
        coeff = np.sqrt(q)[:, None, :] * np.sqrt(g)[None, :, :]
        c = coeff.sum(axis=2)
        out = np.where(c > 0, -np.log(np.minimum(np.where(c > 0, c, 1.0), 1.0)), INFINITE_DISTANCE)
        return np.maximum(out, 0.0)
    if mid in ("chi2", "chi2sym"):
        sym = mid == "chi2sym"
        out = np.zeros((q.shape[0], g.shape[0]))
        for i in range(q.shape[0]):
            a = q[i][None, :]
            denom = 0.5 * (a + g) if sym else np.broadcast_to(a, g.shape)
            num = (a - g) ** 2
            out[i] = np.where(denom > 0, num / np.where(denom > 0, denom, 1.0), 0.0).sum(axis=1)
        return out

    fn = get_measure(measure_id)
    out = np.zeros((q.shape[0], g.shape[0]))
    for i in range(q.shape[0]):
        for j in range(g.shape[0]):
            out[i, j] = fn(q[i], g[j])
    return out
