"""Sparse linear solves used by the time steppers.

SPD systems go through Jacobi-preconditioned conjugate gradients; the
nonsymmetric Newton Jacobians through BiCGSTAB with an incomplete-LU
preconditioner, or a sparse direct factorisation on request.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


@dataclass
class LinearResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residual: float  # ||A x - b|| / ||b||


def _relres(A, x, b) -> float:
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return float(np.linalg.norm(A @ x))
    return float(np.linalg.norm(A @ x - b) / bnorm)


def roundoff_floor(A, x, b) -> float:
    """Smallest relative residual worth asking for: a few ulps of ``|A| |x|``."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return 0.0
    anorm = float(abs(A).sum(axis=1).max())
    return 16.0 * np.finfo(float).eps * anorm * float(np.linalg.norm(x)) / bnorm


def solve_spd(A: sp.spmatrix, b: np.ndarray, tol: float, maxiter: int,
              x0: np.ndarray | None = None) -> LinearResult:
    if not np.any(b):
        return LinearResult(np.zeros_like(b), 0, True, 0.0)
    diag = A.diagonal()
    precond = spla.LinearOperator(A.shape, matvec=lambda r: r / diag, dtype=float)
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = spla.cg(A, b, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, M=precond, callback=tick)
    res = _relres(A, x, b)
    ok = (info == 0 and res <= 10 * tol) or res <= roundoff_floor(A, x, b)
    return LinearResult(x, count[0], bool(ok), res)


def solve_general(A: sp.spmatrix, b: np.ndarray, tol: float, maxiter: int,
                  method: str = "krylov") -> LinearResult:
    if not np.any(b):
        return LinearResult(np.zeros_like(b), 0, True, 0.0)
    A = A.tocsc()
    if method == "direct":
        try:
            x = spla.splu(A).solve(b)
        except RuntimeError:  # exactly singular
            return LinearResult(np.zeros_like(b), 0, False, np.inf)
        res = _relres(A, x, b)
        ok = np.isfinite(res) and res <= max(tol, roundoff_floor(A, x, b))
        return LinearResult(x, 1, bool(ok), res)
    if method != "krylov":
        raise ValueError(f"unknown linear solver {method!r}")
    try:
        ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
    except RuntimeError:
        return LinearResult(np.zeros_like(b), 0, False, np.inf)
    precond = spla.LinearOperator(A.shape, matvec=ilu.solve, dtype=float)
    count = [0]

    def tick(_):
        count[0] += 1

    x, info = spla.bicgstab(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=precond, callback=tick)
    res = _relres(A, x, b)
    ok = np.isfinite(res) and ((info == 0 and res <= 10 * tol) or res <= roundoff_floor(A, x, b))
    return LinearResult(x, max(count[0], 1), bool(ok), res)
