"""Finite-difference discretization of -Lap + lambda*V + eta on a box.

Grids carry L unit cells per side and m mesh nodes per unit length, so nodes
sit at x_i = -1/2 + i*h with h = 1/m and the unit cell Q(z) around lattice
site z collects exactly m nodes per axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConfigurationError, GridMismatchError,
                     SingularOperatorError, SolverNonConvergenceError)

_MAX_DENSE_NODES = 10_000
_MAX_NODES = 1 << 24  # memory budget guard


@dataclass(frozen=True)
class Grid:
    """Regular mesh on the box [-1/2, L-1/2)^d."""

    d: int
    L: int
    m: int
    bc: str = "dirichlet"   # 'dirichlet' | 'periodic'

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.L < 4:
            raise ConfigurationError(f"need L >= 4 unit cells per side, got {self.L}")
        if self.m < 1:
            raise ConfigurationError(f"need m >= 1 nodes per unit length, got {self.m}")
        if self.bc not in ("dirichlet", "periodic"):
            raise ConfigurationError(f"unknown bc {self.bc!r}")
        if self.n_per_side ** self.d > _MAX_NODES:
            raise ConfigurationError("node count exceeds the memory budget")

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def n_per_side(self) -> int:
        return self.L * self.m

    @property
    def shape(self) -> tuple:
        return (self.n_per_side,) * self.d

    @property
    def n_nodes(self) -> int:
        return self.n_per_side ** self.d

    @property
    def axis_coords(self) -> np.ndarray:
        return -0.5 + np.arange(self.n_per_side) / self.m

    @property
    def center_cell(self) -> tuple:
        return (self.L // 2,) * self.d

    @property
    def center_node(self) -> tuple:
        """Node sitting exactly on the central lattice site (m even) or next to it."""
        z = self.L // 2
        return (z * self.m + self.m // 2,) * self.d

    def cell_of_node(self, node: tuple) -> tuple:
        return tuple(int(i) // self.m for i in node)

    def cell_slices(self, cell: tuple) -> tuple:
        if len(cell) != self.d or any(not (0 <= c < self.L) for c in cell):
            raise IndexError(f"cell {cell} out of range for L={self.L}")
        return tuple(slice(c * self.m, (c + 1) * self.m) for c in cell)

    def node_position(self, node: tuple) -> np.ndarray:
        return np.asarray([-0.5 + i / self.m for i in node])


@dataclass(frozen=True)
class ScalarField:
    """One real value per grid node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise GridMismatchError(
                f"field shape {v.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("field contains non-finite values")
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, grid: Grid, c: float) -> "ScalarField":
        return cls(grid=grid, values=np.full(grid.shape, float(c)))


@dataclass(frozen=True)
class HamiltonianSpec:
    """The operator -Lap_h + lambda*V + eta on its grid."""

    grid: Grid
    potential: ScalarField
    lam: float
    eta: float

    def __post_init__(self):
        if self.potential.grid != self.grid:
            raise GridMismatchError("potential lives on a different grid")
        if np.any(self.potential.values < 0.0):
            raise ConfigurationError("potential must be nonnegative")
        if self.lam < 0.0 or self.eta < 0.0:
            raise ConfigurationError("lambda and eta must be nonnegative")
        if self.grid.bc == "periodic" and self.mass_floor() <= 0.0:
            raise SingularOperatorError(
                "periodic operator with eta = 0 and lambda*V = 0 is singular")

    def mass_floor(self) -> float:
        return self.eta + self.lam * float(self.potential.values.max())

    def diagonal(self) -> np.ndarray:
        return (2.0 * self.grid.d * self.grid.m ** 2
                + self.lam * self.potential.values + self.eta)


def _neighbor_sum(values: np.ndarray, bc: str) -> np.ndarray:
    out = np.zeros_like(values)
    for ax in range(values.ndim):
        if bc == "periodic":
            out += np.roll(values, 1, axis=ax)
            out += np.roll(values, -1, axis=ax)
        else:
            lo = [slice(None)] * values.ndim
            hi = [slice(None)] * values.ndim
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            out[tuple(hi)] += values[tuple(lo)]
            out[tuple(lo)] += values[tuple(hi)]
    return out


def apply_hamiltonian(H: HamiltonianSpec, f: ScalarField) -> ScalarField:
    """(2d+1)-point stencil; Dirichlet reads zeros outside, periodic wraps."""
    if f.grid != H.grid:
        raise GridMismatchError("field and Hamiltonian grids differ")
    out = H.diagonal() * f.values - H.grid.m ** 2 * _neighbor_sum(f.values, H.grid.bc)
    return ScalarField(grid=H.grid, values=out)


def _apply_raw(H: HamiltonianSpec, v: np.ndarray) -> np.ndarray:
    return H.diagonal() * v - H.grid.m ** 2 * _neighbor_sum(v, H.grid.bc)


def cg_solve(H: HamiltonianSpec, rhs: ScalarField, tol: float = 1e-9,
             max_iter: int | None = None) -> ScalarField:
    """Jacobi-preconditioned CG down to ||A f - rhs|| <= tol * ||rhs||.

    Fixed iteration order and plain numpy reductions keep the result
    bit-stable across runs.
    """
    if rhs.grid != H.grid:
        raise GridMismatchError("rhs and Hamiltonian grids differ")
    if max_iter is None:
        max_iter = 20 * H.grid.n_per_side * H.grid.d
    b = rhs.values
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return ScalarField(grid=H.grid, values=np.zeros_like(b))
    dinv = 1.0 / H.diagonal()
    x = np.zeros_like(b)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = float(np.vdot(r, z))
    history = [1.0]
    for it in range(max_iter):
        Ap = _apply_raw(H, p)
        pAp = float(np.vdot(p, Ap))
        if pAp <= 0.0:
            raise SingularOperatorError("operator is not positive definite")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        relres = float(np.linalg.norm(r)) / bnorm
        history.append(relres)
        if relres <= tol:
            # guard against recurrence drift: check the true residual
            true_res = float(np.linalg.norm(b - _apply_raw(H, x))) / bnorm
            if true_res <= tol:
                return ScalarField(grid=H.grid, values=x)
            r = b - _apply_raw(H, x)
        z = dinv * r
        rz_new = float(np.vdot(r, z))
        if rz_new == 0.0:   # exact (to round-off) solution reached
            return ScalarField(grid=H.grid, values=x)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    raise SolverNonConvergenceError(
        f"CG did not reach tol={tol} in {max_iter} iterations "
        f"(last relres={history[-1]:.3e})", residual_history=history)


def _assemble_sparse(H: HamiltonianSpec) -> sp.csr_matrix:
    n = H.grid.n_per_side
    m2 = float(H.grid.m ** 2)
    one = sp.identity(n, format="csr")
    lap1 = sp.diags([2.0 * np.ones(n), -np.ones(n - 1), -np.ones(n - 1)],
                    [0, 1, -1], format="lil")
    if H.grid.bc == "periodic":
        lap1[0, n - 1] += -1.0
        lap1[n - 1, 0] += -1.0
    lap1 = (m2 * lap1).tocsr()
    lap = None
    for ax in range(H.grid.d):
        term = None
        for j in range(H.grid.d):
            blk = lap1 if j == ax else one
            term = blk if term is None else sp.kron(term, blk, format="csr")
        lap = term if lap is None else lap + term
    diag = (H.lam * H.potential.values + H.eta).ravel(order="C")
    return (lap + sp.diags(diag)).tocsr()


def dense_solve_oracle(H: HamiltonianSpec, rhs: ScalarField) -> ScalarField:
    """Exact direct-factorization solve; test oracle only, small systems."""
    if rhs.grid != H.grid:
        raise GridMismatchError("rhs and Hamiltonian grids differ")
    if H.grid.n_nodes > _MAX_DENSE_NODES:
        raise ConfigurationError(
            f"direct oracle limited to {_MAX_DENSE_NODES} nodes, got {H.grid.n_nodes}")
    if H.grid.bc == "periodic" and H.mass_floor() <= 0.0:
        raise SingularOperatorError("periodic operator without mass or potential")
    A = _assemble_sparse(H).tocsc()
    lu = spla.splu(A)
    x = lu.solve(rhs.values.ravel(order="C"))
    return ScalarField(grid=H.grid, values=x.reshape(H.grid.shape))


def forward_gradient_sq(values: np.ndarray, grid: Grid, boundary: str = "auto") -> np.ndarray:
    """Per-node sum over axes of squared forward differences / h^2.

    boundary: 'zero' pads with zeros (Dirichlet energy), 'edge' replicates the
    boundary value (zero gradient there), 'auto' picks from the grid bc
    ('zero' for dirichlet, wrap for periodic).
    """
    out = np.zeros_like(values)
    for ax in range(values.ndim):
        if boundary == "auto" and grid.bc == "periodic":
            diff = np.roll(values, -1, axis=ax) - values
        else:
            lo = [slice(None)] * values.ndim
            hi = [slice(None)] * values.ndim
            lo[ax] = slice(0, -1)
            hi[ax] = slice(1, None)
            diff = np.zeros_like(values)
            diff[tuple(lo)] = values[tuple(hi)] - values[tuple(lo)]
            if boundary != "edge":
                last = [slice(None)] * values.ndim
                last[ax] = slice(-1, None)
                diff[tuple(last)] = -values[tuple(last)]  # ghost zero
        out += (diff * grid.m) ** 2
    return out
