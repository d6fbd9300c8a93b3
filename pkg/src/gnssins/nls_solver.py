"""Levenberg-Marquardt solver over block-structured nonlinear least squares.

A problem is a set of state slots plus residual blocks; each block binds a
few slots to a residual function, optional analytic Jacobians and a
whitening matrix (inverse Cholesky factor of the block covariance). The
normal equations are accumulated block-wise and solved with a dense
Cholesky factorization for small problems, switching to a sparse LU for
large batch windows where the block-banded structure makes dense solves
wasteful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

DENSE_LIMIT = 600


class EvaluationError(ValueError):
    """A residual evaluated to a non-finite value."""


class SolverError(RuntimeError):
    """Normal equations stayed singular up to the damping ceiling."""


@dataclass
class ResidualBlock:
    """One weighted residual term.

    ``fn(*states)`` returns the raw residual (length ``dim``); ``jac``
    returns one Jacobian per bound state and may be None to fall back to
    central differences. ``sqrt_info`` whitens residual and Jacobians, so
    ``sqrt_info.T @ sqrt_info`` equals the inverse block covariance.
    """

    state_indices: tuple[int, ...]
    dim: int
    fn: Callable[..., np.ndarray]
    sqrt_info: np.ndarray
    jac: Optional[Callable[..., list[np.ndarray]]] = None
    label: str = ""

    def __post_init__(self) -> None:
        self.sqrt_info = np.asarray(self.sqrt_info, dtype=float)
        # diagonal whitening is by far the common case; cache the diagonal
        # so the solver can whiten with elementwise products
        if self.sqrt_info.ndim == 2 and np.count_nonzero(
            self.sqrt_info - np.diag(np.diagonal(self.sqrt_info))
        ) == 0:
            self._diag_info = np.diagonal(self.sqrt_info).copy()
        else:
            self._diag_info = None

    def whiten_residual(self, r: np.ndarray) -> np.ndarray:
        if self._diag_info is not None:
            return self._diag_info * r
        return self.sqrt_info @ r

    def whiten_jacobian(self, j: np.ndarray) -> np.ndarray:
        if self._diag_info is not None:
            return self._diag_info[:, None] * j
        return self.sqrt_info @ j


@dataclass
class NlsProblem:
    state_dims: list[int]
    blocks: list[ResidualBlock]
    initial_values: np.ndarray

    def __post_init__(self) -> None:
        self.initial_values = np.asarray(self.initial_values, dtype=float)
        self.offsets = np.concatenate(([0], np.cumsum(self.state_dims)))
        if self.initial_values.size != self.offsets[-1]:
            raise ValueError(
                f"initial values have size {self.initial_values.size}, "
                f"expected {self.offsets[-1]}"
            )
        for b in self.blocks:
            for idx in b.state_indices:
                if not 0 <= idx < len(self.state_dims):
                    raise ValueError(f"block {b.label!r} references unknown slot {idx}")

    @property
    def total_dim(self) -> int:
        return int(self.offsets[-1])

    def split(self, values: np.ndarray) -> list[np.ndarray]:
        return [values[self.offsets[i] : self.offsets[i + 1]] for i in range(len(self.state_dims))]


@dataclass
class LmConfig:
    lambda0: float = 1e-4
    lambda_max: float = 1e10
    tol: float = 1e-8
    gtol: float = 1e-8
    max_iters: int = 100


@dataclass
class SolveReport:
    values: np.ndarray
    cost: float
    iterations: int
    converged: bool
    cost_trace: list[float] = field(default_factory=list)
    jacobian_evals: int = 0
    message: str = ""


def block_states(problem: NlsProblem, block: ResidualBlock, values: np.ndarray) -> list[np.ndarray]:
    parts = problem.split(values)
    return [parts[i] for i in block.state_indices]


def total_cost(problem: NlsProblem, values: np.ndarray) -> float:
    """Sum of squared whitened residuals over all blocks."""
    values = np.asarray(values, dtype=float)
    parts = problem.split(values)
    cost = 0.0
    for block in problem.blocks:
        rw = block.whiten_residual(block.fn(*[parts[i] for i in block.state_indices]))
        cost += float(rw @ rw)
    if not np.isfinite(cost):
        _raise_nonfinite(problem, parts)
    return cost


def _raise_nonfinite(problem: NlsProblem, parts: list[np.ndarray]) -> None:
    for block in problem.blocks:
        r = np.asarray(block.fn(*[parts[i] for i in block.state_indices]), dtype=float)
        if not np.all(np.isfinite(r)):
            raise EvaluationError(f"non-finite residual in block {block.label!r}")
    raise EvaluationError("non-finite cost")


def numeric_jacobian(
    block: ResidualBlock, states: Sequence[np.ndarray], h: float = 1e-6
) -> np.ndarray:
    """Central-difference Jacobian of the raw residual w.r.t. the block states.

    Columns follow the concatenation of the block's bound states.
    """
    if h <= 0:
        raise ValueError("step must be positive")
    states = [np.array(s, dtype=float) for s in states]
    cols = []
    for si, s in enumerate(states):
        for j in range(s.size):
            orig = s[j]
            s[j] = orig + h
            plus = np.asarray(block.fn(*states), dtype=float)
            s[j] = orig - h
            minus = np.asarray(block.fn(*states), dtype=float)
            s[j] = orig
            cols.append((plus - minus) / (2.0 * h))
    return np.column_stack(cols)


def _block_jacobians(block: ResidualBlock, states: list[np.ndarray]) -> list[np.ndarray]:
    if block.jac is not None:
        return [np.asarray(j, dtype=float) for j in block.jac(*states)]
    full = numeric_jacobian(block, states)
    out = []
    col = 0
    for s in states:
        out.append(full[:, col : col + s.size])
        col += s.size
    return out


def _pair_indices(problem: NlsProblem, ia: int, ib: int):
    cache = getattr(problem, "_pair_cache", None)
    if cache is None:
        cache = {}
        problem._pair_cache = cache
    key = (ia, ib)
    if key not in cache:
        ii, jj = np.meshgrid(
            np.arange(problem.offsets[ia], problem.offsets[ia + 1]),
            np.arange(problem.offsets[ib], problem.offsets[ib + 1]),
            indexing="ij",
        )
        cache[key] = (ii.ravel(), jj.ravel())
    return cache[key]


def _assemble_normal_equations(problem: NlsProblem, values: np.ndarray):
    """Whitened J^T J and J^T r accumulated block by block."""
    n = problem.total_dim
    g = np.zeros(n)
    dense = n <= DENSE_LIMIT
    if dense:
        h_mat = np.zeros((n, n))
    else:
        rows: list[np.ndarray] = []
        cols: list[np.ndarray] = []
        vals: list[np.ndarray] = []
    cost = 0.0
    parts = problem.split(values)
    for block in problem.blocks:
        states = [parts[i] for i in block.state_indices]
        jacs = _block_jacobians(block, states)
        rw = block.whiten_residual(block.fn(*states))
        cost += float(rw @ rw)
        jws = [block.whiten_jacobian(j) for j in jacs]
        for a, ia in enumerate(block.state_indices):
            sl_a = slice(problem.offsets[ia], problem.offsets[ia + 1])
            g[sl_a] += jws[a].T @ rw
            for b, ib in enumerate(block.state_indices):
                contrib = jws[a].T @ jws[b]
                if dense:
                    h_mat[sl_a, problem.offsets[ib] : problem.offsets[ib + 1]] += contrib
                else:
                    ii, jj = _pair_indices(problem, ia, ib)
                    rows.append(ii)
                    cols.append(jj)
                    vals.append(contrib.ravel())
    if not np.isfinite(cost):
        _raise_nonfinite(problem, parts)
    if dense:
        return h_mat, g, cost
    h_sparse = scipy.sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsc()
    return h_sparse, g, cost


def _solve_damped(h_mat, diag, lam, g):
    """Solve (H + lam*diag(H)) delta = -g; returns None when singular."""
    n = g.size
    if scipy.sparse.issparse(h_mat):
        damped = h_mat + scipy.sparse.diags(lam * diag)
        try:
            lu = scipy.sparse.linalg.splu(damped.tocsc())
            delta = lu.solve(-g)
        except RuntimeError:
            return None
        if not np.all(np.isfinite(delta)):
            return None
        return delta
    damped = h_mat + np.diag(lam * diag)
    try:
        cf = scipy.linalg.cho_factor(damped, check_finite=False)
        return scipy.linalg.cho_solve(cf, -g, check_finite=False)
    except scipy.linalg.LinAlgError:
        return None


def solve_lm(problem: NlsProblem, cfg: Optional[LmConfig] = None) -> SolveReport:
    """Minimize the whitened squared-residual cost with Levenberg-Marquardt.

    Jacobians are recomputed at every accepted iterate; a step is accepted
    only when it lowers the cost, otherwise the damping grows tenfold.
    """
    cfg = cfg or LmConfig()
    x = problem.initial_values.astype(float).copy()
    lam = cfg.lambda0
    h_mat, g, cost = _assemble_normal_equations(problem, x)
    jacobian_evals = 1
    trace = [cost]
    if not np.isfinite(cost):
        raise EvaluationError("non-finite initial cost")

    iterations = 0
    converged = False
    message = "max iterations reached"
    for _ in range(cfg.max_iters):
        if np.linalg.norm(g, np.inf) < cfg.gtol:
            converged = True
            message = "gradient below gtol"
            break
        iterations += 1
        diag = h_mat.diagonal() if scipy.sparse.issparse(h_mat) else np.diag(h_mat).copy()
        accepted = False
        while True:
            delta = _solve_damped(h_mat, diag, lam, g)
            if delta is None:
                lam *= 10.0
                if lam > cfg.lambda_max:
                    raise SolverError(
                        f"normal equations singular up to lambda={cfg.lambda_max:g}"
                    )
                continue
            candidate = x + delta
            new_cost = total_cost(problem, candidate)
            if new_cost < cost:
                accepted = True
                break
            if np.linalg.norm(delta) <= 1e-15 * (1.0 + np.linalg.norm(x)):
                message = "step size negligible"
                converged = True
                break
            lam *= 10.0
            if lam > cfg.lambda_max:
                message = "damping exceeded maximum without improvement"
                break
        if not accepted:
            break
        x = candidate
        rel_drop = (cost - new_cost) / max(cost, 1e-300)
        # drop the damping faster when the quadratic model matched the actual
        # decrease; linear problems then finish within two iterations
        predicted = float(delta @ (lam * diag * delta - g))
        ratio = (cost - new_cost) / predicted if predicted > 0 else 0.0
        cost = new_cost
        trace.append(cost)
        lam = max(lam / (100.0 if ratio > 0.75 else 10.0), 1e-15)
        h_mat, g, cost_check = _assemble_normal_equations(problem, x)
        jacobian_evals += 1
        cost = cost_check
        if rel_drop < cfg.tol:
            converged = True
            message = "relative cost change below tol"
            break
    else:
        if np.linalg.norm(g, np.inf) < cfg.gtol:
            converged = True
            message = "gradient below gtol"

    return SolveReport(
        values=x,
        cost=cost,
        iterations=iterations,
        converged=converged,
        cost_trace=trace,
        jacobian_evals=jacobian_evals,
        message=message,
    )


def sqrt_info_from_cov_diag(variances: np.ndarray) -> np.ndarray:
    """Whitening matrix for a diagonal covariance given as variances."""
    variances = np.asarray(variances, dtype=float)
    if np.any(variances <= 0):
        raise ValueError("variances must be positive")
    return np.diag(1.0 / np.sqrt(variances))
