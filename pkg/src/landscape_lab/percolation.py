"""Coarse-grained percolation, chemical distance, and the 1d gap statistic.

Edges of the 2^k-spaced coarse lattice are open when some fine site inside
the disjoint edge cube carries an amplitude above the threshold gamma; the
chemical distance counts open edges along the cheapest path (0-1 BFS).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .disorder import DisorderLaw, OmegaField, sample_omega
from .errors import ConfigurationError, LawValidationError


class UnionFind:
    """Array-based disjoint sets with union by size and path halving."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, a: int) -> int:
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]


@dataclass(frozen=True)
class CoarseGraph:
    """Nearest-neighbor graph on (2^k Z^d) inside the fine box."""

    k: int
    gamma: float
    nc: int                 # coarse vertices per side
    d: int
    xi: tuple               # per axis: bool array, edge (idx -> idx + e_ax) open

    @property
    def spacing(self) -> int:
        return 1 << self.k

    @property
    def n_vertices(self) -> int:
        return self.nc ** self.d

    def vertex_indices(self):
        return np.stack(np.meshgrid(*[np.arange(self.nc)] * self.d, indexing="ij"),
                        axis=-1).reshape(-1, self.d)

    def linear(self, idx) -> int:
        return int(np.ravel_multi_index(tuple(idx), (self.nc,) * self.d))

    def edges(self):
        """Yield (vertex_idx_tuple, axis, open) for every edge."""
        for ax in range(self.d):
            arr = self.xi[ax]
            for flat, open_ in np.ndenumerate(arr):
                yield flat, ax, bool(open_)


@dataclass(frozen=True)
class ChemicalDistanceMap:
    origin: tuple
    dist: np.ndarray    # shape (nc,)*d, integer passage times


@dataclass(frozen=True)
class ClusterReport:
    labels: np.ndarray                 # open-cluster label per vertex, shape (nc,)*d
    largest_fraction: float
    closed_component_diameters: list   # Chebyshev diameters in coarse units


def edge_cube_site_count(k: int, d: int) -> int:
    """Fine sites inside the open edge cube of side 2^(k-1) (interior edges)."""
    half = (1 << (k - 1)) / 2.0
    per_axis = sum(1 for n in range(-(1 << k), (1 << k) + 1) if abs(n) < half)
    return per_axis ** d


def choose_k(law: DisorderLaw, gamma: float, d: int, k_max: int = 16) -> int:
    """Smallest coarse scale making closed edges subcritical (P[closed] < 1/2)."""
    p_ge = law.prob_ge(gamma)
    if p_ge <= 0.0:
        raise LawValidationError(f"P[w >= {gamma}] = 0 under this law")
    p_lt = 1.0 - p_ge
    for k in range(1, k_max + 1):
        if p_lt ** edge_cube_site_count(k, d) < 0.5:
            return k
    raise ConfigurationError(f"no k <= {k_max} achieves subcritical closed edges")


def coarse_grain(omega: OmegaField, k: int, gamma: float) -> CoarseGraph:
    """Threshold the max amplitude in each (disjoint) edge cube."""
    s = 1 << k
    q = (1 << (k - 1)) / 2.0   # half-width of the open edge cube
    L = omega.box[0]
    if any(b != L for b in omega.box):
        raise ConfigurationError("coarse graining expects a cubic box")
    nc = (L - 1) // s + 1
    if nc < 4:
        raise ConfigurationError(f"box too small: only {nc} coarse cells per side")

    def axis_range(center: float):
        lo = int(np.floor(center - q)) + 1        # smallest int > center - q
        hi = int(np.ceil(center + q)) - 1         # largest  int < center + q
        if np.floor(center - q) == center - q:
            lo = int(center - q) + 1
        if np.ceil(center + q) == center + q:
            hi = int(center + q) - 1
        return max(lo, 0), min(hi, L - 1)

    xi = []
    for ax in range(omega.d):
        shape = tuple(nc - 1 if j == ax else nc for j in range(omega.d))
        arr = np.zeros(shape, dtype=bool)
        for idx in np.ndindex(shape):
            slices = []
            ok = True
            for j in range(omega.d):
                center = idx[j] * s + (s / 2.0 if j == ax else 0.0)
                lo, hi = axis_range(center)
                if hi < lo:
                    ok = False
                    break
                slices.append(slice(lo, hi + 1))
            if ok:
                arr[idx] = omega.values[tuple(slices)].max() >= gamma
        xi.append(arr)
    return CoarseGraph(k=k, gamma=gamma, nc=nc, d=omega.d, xi=tuple(xi))


def _neighbors(idx, nc: int):
    for ax in range(len(idx)):
        if idx[ax] + 1 < nc:
            yield tuple(idx[j] + (1 if j == ax else 0) for j in range(len(idx))), ax, idx
        if idx[ax] - 1 >= 0:
            lower = tuple(idx[j] - (1 if j == ax else 0) for j in range(len(idx)))
            yield lower, ax, lower


def cluster_analysis(g: CoarseGraph) -> ClusterReport:
    """Union-find over open edges; BFS components of isolated (closed) vertices."""
    shape = (g.nc,) * g.d
    uf = UnionFind(g.n_vertices)
    incident_open = np.zeros(shape, dtype=bool)
    for idx, ax, open_ in g.edges():
        if open_:
            a = np.ravel_multi_index(idx, shape)
            up = tuple(idx[j] + (1 if j == ax else 0) for j in range(g.d))
            b = np.ravel_multi_index(up, shape)
            uf.union(int(a), int(b))
            incident_open[idx] = True
            incident_open[up] = True
    labels = np.asarray([uf.find(i) for i in range(g.n_vertices)]).reshape(shape)
    counts = np.bincount(labels.ravel())
    largest = float(counts.max()) / g.n_vertices

    closed = ~incident_open
    seen = np.zeros(shape, dtype=bool)
    diameters = []
    for start in np.argwhere(closed):
        start = tuple(start)
        if seen[start]:
            continue
        comp = [start]
        seen[start] = True
        queue = deque([start])
        while queue:
            cur = queue.popleft()
            for nb, _ax, _lo in _neighbors(cur, g.nc):
                if closed[nb] and not seen[nb]:
                    seen[nb] = True
                    comp.append(nb)
                    queue.append(nb)
        pts = np.asarray(comp)
        diameters.append(int((pts.max(axis=0) - pts.min(axis=0)).max()))
    return ClusterReport(labels=labels, largest_fraction=largest,
                         closed_component_diameters=diameters)


def chemical_distance(g: CoarseGraph, origin) -> ChemicalDistanceMap:
    """Single-source passage times with 0/1 edge weights (deque search, exact)."""
    origin = tuple(int(c) for c in np.atleast_1d(origin))
    shape = (g.nc,) * g.d
    if len(origin) != g.d or any(not (0 <= c < g.nc) for c in origin):
        raise ConfigurationError(f"origin {origin} outside the coarse graph")
    dist = np.full(shape, -1, dtype=int)
    dist[origin] = 0
    dq = deque([origin])
    while dq:
        cur = dq.popleft()
        dcur = dist[cur]
        for nb, ax, lower in _neighbors(cur, g.nc):
            w = 1 if g.xi[ax][lower] else 0
            nd = dcur + w
            if dist[nb] == -1 or nd < dist[nb]:
                dist[nb] = nd
                if w == 0:
                    dq.appendleft(nb)
                else:
                    dq.append(nb)
    return ChemicalDistanceMap(origin=origin, dist=dist)


def wilson_interval(successes: int, n: int, z: float = 1.96):
    if n == 0:
        return 0.0, 1.0
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class KestenRow:
    radius: int
    frequency: float
    ci_low: float
    ci_high: float
    threshold: float


def kesten_tail_experiment(law: DisorderLaw, d: int, L: int, gamma: float,
                           radii, c_probe: float, n_samples: int,
                           master_seed: int, k: int | None = None):
    """Empirical P[min chemical distance to the radius-R shell <= c_probe*R]."""
    radii = [int(R) for R in radii]
    if sorted(radii) != radii:
        raise ConfigurationError("radii must be increasing")
    if not (0.0 < c_probe <= 1.0):
        raise ConfigurationError("c_probe must lie in (0, 1]")
    if k is None:
        k = choose_k(law, gamma, d)
    hits = {R: 0 for R in radii}
    for i in range(n_samples):
        omega = sample_omega(law, (L,) * d, master_seed, i)
        g = coarse_grain(omega, k, gamma)
        origin = (g.nc // 2,) * d
        if max(radii) > min(origin[0], g.nc - 1 - origin[0]):
            raise ConfigurationError("largest radius does not fit in the coarse box")
        dmap = chemical_distance(g, origin)
        idx = np.stack(np.meshgrid(*[np.arange(g.nc)] * d, indexing="ij"), axis=-1)
        cheb = np.max(np.abs(idx - np.asarray(origin)), axis=-1)
        for R in radii:
            shell_min = int(dmap.dist[cheb == R].min())
            if shell_min <= c_probe * R:
                hits[R] += 1
    rows = []
    for R in radii:
        lo, hi = wilson_interval(hits[R], n_samples)
        rows.append(KestenRow(radius=R, frequency=hits[R] / n_samples,
                              ci_low=lo, ci_high=hi, threshold=c_probe * R))
    return rows


@dataclass(frozen=True)
class GapStatistic:
    gap: int
    censored: bool


def gap_statistic_1d(omega: OmegaField, gamma: float, y_prime: int) -> GapStatistic:
    """Distance between the nearest above-threshold sites strictly left/right of y'."""
    if omega.d != 1:
        raise ConfigurationError("gap statistic is one-dimensional")
    L = omega.box[0]
    if not (0 <= y_prime < L):
        raise IndexError(f"site {y_prime} outside box of length {L}")
    v = omega.values
    right = None
    for j in range(y_prime + 1, L):
        if v[j] >= gamma:
            right = j
            break
    left = None
    for j in range(y_prime - 1, -1, -1):
        if v[j] >= gamma:
            left = j
            break
    if right is None or left is None:
        return GapStatistic(gap=L, censored=True)
    return GapStatistic(gap=right - left, censored=False)


@dataclass(frozen=True)
class AnchoringReport:
    p_values: tuple
    moments: tuple              # E[gap^p]^(1/p) per p
    censored_fraction: float
    status: str                 # 'PASS' | 'FAIL' | 'INCONCLUSIVE'
    gap_mean: float
    gap_sem: float              # standard error of the mean gap


def anchoring_experiment_1d(law: DisorderLaw, L: int, gamma: float,
                            n_samples: int, master_seed: int,
                            p_values=(1, 2, 4, 8),
                            ratio_corridor: float = 2.5,
                            min_samples: int = 100) -> AnchoringReport:
    """Moment growth of the 1d gap: at most linear in p (doubling-ratio test)."""
    gaps, censored = [], 0
    for i in range(n_samples):
        omega = sample_omega(law, (L,), master_seed, i)
        g = gap_statistic_1d(omega, gamma, L // 2)
        if g.censored:
            censored += 1
        else:
            gaps.append(g.gap)
    frac = censored / n_samples
    gaps = np.asarray(gaps, dtype=float)
    moments = tuple(float(np.mean(gaps ** p) ** (1.0 / p)) for p in p_values)
    gap_mean = float(gaps.mean()) if gaps.size else np.nan
    gap_sem = (float(gaps.std(ddof=1) / np.sqrt(gaps.size))
               if gaps.size > 1 else np.nan)
    if frac > 0.01 or n_samples < min_samples:
        status = "INCONCLUSIVE"
    else:
        ratios = [moments[i + 1] / moments[i] for i in range(len(moments) - 1)]
        status = "PASS" if all(r <= ratio_corridor for r in ratios) else "FAIL"
    return AnchoringReport(p_values=tuple(p_values), moments=moments,
                           censored_fraction=frac, status=status,
                           gap_mean=gap_mean, gap_sem=gap_sem)
