"""Dense nonnegative linear algebra kernels.

Frobenius-norm NMF with Lee-Seung multiplicative updates, an active-set
(Lawson-Hanson) NNLS solver, reconstruction and cosine similarity.
All functions are pure: inputs are never modified in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, DimensionMismatch, InvalidParameter, InvalidRank

EPS = 1e-12
PRUNE_NORM = 1e-10

INNER_ITERS = 30
INNER_DELTA = 1e-3

DEFAULT_MAX_ITERS = 2000
DEFAULT_TOL = 1e-8


@dataclass(frozen=True)
class Factorization:
    """Result of :func:`nmf_factorize`.

    ``w`` holds the latent signatures as columns and ``h`` their
    activations. ``k`` is the effective rank after pruning degenerate
    columns, so it may be smaller than the requested rank.
    """

    w: np.ndarray
    h: np.ndarray
    k: int
    relative_error: float
    n_iter: int = 0
    requested_k: int = 0
    objective_history: np.ndarray | None = field(default=None, repr=False)


@dataclass(frozen=True)
class ProjectionResult:
    coefficients: np.ndarray
    reconstruction: np.ndarray
    residual_norm: float


def as_feature_matrix(x) -> np.ndarray:
    """Validate ``x`` as a nonnegative, finite 2-D float array."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D matrix, got {x.ndim} dimensions")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise DegenerateInput(f"matrix must be non-empty, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DegenerateInput("matrix contains NaN or infinite entries")
    if np.any(x < 0):
        raise DegenerateInput("matrix contains negative entries")
    return x


def _objective(x, w, h):
    r = x - w @ h
    return float(np.einsum("ij,ij->", r, r))


def objective_slack(prev: float, xx: float) -> float:
    """Rounding allowance when comparing consecutive objective values.

    ``xx`` is ``||x||_F^2``; near an exact fit the residual is dominated by
    cancellation error of order ``eps * |x|`` per entry.
    """
    return 1e-9 * prev + (100 * np.finfo(float).eps) ** 2 * xx


def _inner_updates(f, step, n_steps, rel_delta):
    # Repeated multiplicative steps on one factor while the other is fixed;
    # the Gram products are cached by the caller so these steps are cheap.
    first = None
    for _ in range(n_steps):
        nxt = step(f)
        delta = np.linalg.norm(nxt - f)
        f = nxt
        if first is None:
            first = delta
        elif delta <= rel_delta * first:
            break
    return f


def nmf_factorize(
    x,
    k: int,
    seed: int = 0,
    max_iters: int = DEFAULT_MAX_ITERS,
    tol: float = DEFAULT_TOL,
    *,
    inner_iters: int = INNER_ITERS,
    inner_delta: float = INNER_DELTA,
    debug: bool = False,
) -> Factorization:
    """Factorize ``x ~= w @ h`` with multiplicative updates.

    Each outer iteration applies up to ``inner_iters`` Lee-Seung updates to
    ``h`` and then to ``w`` (accelerated MU). Every single update is monotone,
    so the objective never increases between iterations.

    Parameters
    ----------
    x : array_like, shape (n, m)
        Nonnegative data, features as rows and samples as columns.
    k : int
        Requested number of latent signatures, ``1 <= k <= min(n, m)``.
    seed : int
        Seed for the random initialization.
    max_iters : int
        Iteration cap.
    tol : float
        Stop once the relative decrease of ``||x - wh||_F^2`` falls below
        this value.
    inner_iters, inner_delta : int, float
        Cap on repeated updates of one factor per outer iteration; the
        repetition stops early once a step moves the factor less than
        ``inner_delta`` times the first step did.
    debug : bool
        Record the objective at every iteration and assert that it never
        increases.

    Returns
    -------
    Factorization
    """
    x = as_feature_matrix(x)
    n, m = x.shape
    if not np.any(x > 0):
        raise DegenerateInput("matrix is all-zero")
    if not isinstance(k, (int, np.integer)) or k < 1 or k > min(n, m):
        raise InvalidRank(f"rank k={k} outside [1, {min(n, m)}]")
    if max_iters < 1:
        raise InvalidParameter("max_iters must be positive")
    if tol <= 0:
        raise InvalidParameter("tol must be positive")
    if inner_iters < 1:
        raise InvalidParameter("inner_iters must be positive")

    rng = np.random.default_rng(seed)
    # (0, 1] uniform draws; the square root makes the product w @ h land on
    # the scale of mean(x).
    scale = np.sqrt(x.mean() / k)
    w = (1.0 - rng.random((n, k))) * scale
    h = (1.0 - rng.random((k, m))) * scale

    history = []
    xx = float(np.einsum("ij,ij->", x, x))
    prev = _objective(x, w, h)
    if debug:
        history.append(prev)
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        wtx = w.T @ x
        wtw = w.T @ w
        h = _inner_updates(h, lambda h_: h_ * (wtx / np.maximum(wtw @ h_, EPS)), inner_iters, inner_delta)
        xht = x @ h.T
        hht = h @ h.T
        w = _inner_updates(w, lambda w_: w_ * (xht / np.maximum(w_ @ hht, EPS)), inner_iters, inner_delta)
        obj = _objective(x, w, h)
        if debug:
            assert obj <= prev + objective_slack(prev, xx), (
                f"objective increased at iteration {n_iter}: {prev} -> {obj}"
            )
            history.append(obj)
        if prev <= 0.0 or (prev - obj) < tol * prev:
            prev = obj
            break
        prev = obj

    keep = np.linalg.norm(w, axis=0) >= PRUNE_NORM
    if not np.all(keep):
        w = w[:, keep]
        h = h[keep, :]
    if w.shape[1] == 0:
        raise DegenerateInput("every signature collapsed to zero")
    rel = float(np.linalg.norm(x - w @ h) / np.linalg.norm(x))
    return Factorization(
        w=w,
        h=h,
        k=int(w.shape[1]),
        relative_error=rel,
        n_iter=n_iter,
        requested_k=int(k),
        objective_history=np.asarray(history) if debug else None,
    )


def nnls_solve(m, x, tol: float = 1e-10, max_iter: int | None = None) -> ProjectionResult:
    """Solve ``argmin_{h >= 0} ||x - m h||_2`` with the Lawson-Hanson method.

    On return the coefficients satisfy the KKT conditions to within ``tol``
    measured on the half-gradient ``m.T @ (m h - x)``.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[1] < 1:
        raise DimensionMismatch("signature matrix must be 2-D with at least one column")
    b = np.asarray(x, dtype=float).ravel()
    n, k = a.shape
    if b.shape[0] != n:
        raise DimensionMismatch(f"vector has length {b.shape[0]}, matrix has {n} rows")
    if not np.all(np.isfinite(b)):
        raise DegenerateInput("vector contains NaN or infinite entries")
    if max_iter is None:
        max_iter = 3 * k + 30

    h = np.zeros(k)
    passive = np.zeros(k, dtype=bool)
    atb = a.T @ b
    ata = a.T @ a
    w = atb.copy()
    outer = 0
    while outer < max_iter:
        candidates = np.where(~passive, w, -np.inf)
        j = int(np.argmax(candidates))
        if not (candidates[j] > tol):
            break
        outer += 1
        passive[j] = True
        while True:
            idx = np.flatnonzero(passive)
            s = np.zeros(k)
            s[idx] = np.linalg.lstsq(a[:, idx], b, rcond=None)[0]
            if np.all(s[idx] > 0):
                h = s
                break
            bad = idx[s[idx] <= 0]
            step = h[bad] / (h[bad] - s[bad])
            alpha = float(np.min(step))
            h = h + alpha * (s - h)
            drop = passive & (h <= 0)
            drop[bad[step <= alpha]] = True
            passive &= ~drop
            h[~passive] = 0.0
            if not passive.any():
                break
        w = atb - ata @ h

    h = np.maximum(h, 0.0)
    rec = a @ h
    return ProjectionResult(
        coefficients=h,
        reconstruction=rec,
        residual_norm=float(np.linalg.norm(b - rec)),
    )


def kkt_violation(m, x, h) -> float:
    """Largest KKT violation of ``h`` for ``min ||x - m h||`` over ``h >= 0``.

    Zero coefficients may have a nonnegative half-gradient, positive ones
    must have a zero half-gradient.
    """
    m = np.asarray(m, dtype=float)
    h = np.asarray(h, dtype=float)
    grad = m.T @ (m @ h - np.asarray(x, dtype=float))
    at_bound = h <= 0
    viol = np.where(at_bound, np.maximum(-grad, 0.0), np.abs(grad))
    return float(max(viol.max(initial=0.0), np.maximum(-h, 0.0).max(initial=0.0)))


def reconstruct(m, h) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    h = np.asarray(h, dtype=float).ravel()
    if m.ndim != 2 or m.shape[1] != h.shape[0]:
        raise DimensionMismatch(f"matrix shape {m.shape} incompatible with {h.shape[0]} coefficients")
    return m @ h


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors; 0.0 if either is zero."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"vector lengths differ: {a.shape[0]} vs {b.shape[0]}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_to_columns(m, v) -> np.ndarray:
    """Cosine similarity between ``v`` and every column of ``m``."""
    m = np.asarray(m, dtype=float)
    v = np.asarray(v, dtype=float).ravel()
    if m.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"vector length {v.shape[0]} vs matrix rows {m.shape[0]}")
    norms = np.linalg.norm(m, axis=0)
    nv = np.linalg.norm(v)
    out = np.zeros(m.shape[1])
    if nv == 0.0:
        return out
    ok = norms > 0
    out[ok] = (v @ m[:, ok]) / (norms[ok] * nv)
    return np.clip(out, -1.0, 1.0)
