"""Feature-based low-rank tag refinement.

Fits factors P (image-feature side) and Q (tag-feature side) so that the
reconstruction V P Q^T T^T tracks the observed confidences, minimizing

    sum_ij w_ij (O - V P Q^T T^T)_ij^2
    + lambda1/2 (||P||_F^2 + ||Q||_F^2)
    + lambda2 [ tr(Ohat^T L_v Ohat) + tr(Ohat L_s Ohat^T) ]

where w_ij = 1 on annotated positions and 1 - mu on unannotated ones
(mu < 1 discounts residuals where an absent tag is probably a true
negative), L_v is the image-similarity Laplacian and L_s the
tag-similarity Laplacian. The weighted loss equals the subtracted form
||O - Ohat||_F^2 - mu ||U_omega(O - Ohat)||_F^2 identically.

Solved by alternating minimization; each factor subproblem is a convex
quadratic handled by matrix-free conjugate gradient, so the only dense
n_images x n_tags intermediates are residual-shaped buffers.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .tagmat import FeatureMatrix, GraphLaplacian, TagMatrix, read_dense_matrix, write_dense_matrix


class RefineError(ValueError):
    """Raised for invalid refinement configuration or mismatched dimensions."""


class CgBreakdownError(RuntimeError):
    """Conjugate gradient met a non-positive curvature direction.

    The subproblem operator should be PSD whenever 0 <= mu < 1 and the
    Laplacians are valid, so this signals a lambda/mu misconfiguration or
    numerically broken inputs.
    """


@dataclass(frozen=True)
class RefineConfig:
    rank: int = 8
    lambda1: float = 0.1
    lambda2: float = 0.01
    mu: float = 0.4
    outer_iters: int = 30
    cg_iters: int = 200
    cg_tol: float = 1e-8
    seed: int = 0
    # Relative objective-change threshold for stopping the outer loop early.
    obj_tol: float = 1e-6

    def validate(self, f_i: int | None = None, f_t: int | None = None) -> None:
        problems = []
        if self.rank < 1:
            problems.append(f"rank must be >= 1, got {self.rank}")
        if f_i is not None and f_t is not None and self.rank > min(f_i, f_t):
            problems.append(
                f"rank {self.rank} exceeds min feature dimension {min(f_i, f_t)}"
            )
        if self.lambda1 < 0 or self.lambda2 < 0:
            problems.append("lambda1 and lambda2 must be nonnegative")
        if not 0.0 <= self.mu < 1.0:
            problems.append(f"mu must satisfy 0 <= mu < 1, got {self.mu}")
        if self.outer_iters < 1:
            problems.append(f"outer_iters must be >= 1, got {self.outer_iters}")
        if self.cg_iters < 1:
            problems.append(f"cg_iters must be >= 1, got {self.cg_iters}")
        if not self.cg_tol > 0:
            problems.append(f"cg_tol must be > 0, got {self.cg_tol}")
        if self.obj_tol < 0:
            problems.append(f"obj_tol must be >= 0, got {self.obj_tol}")
        if problems:
            raise RefineError("; ".join(problems))


@dataclass(frozen=True)
class FactorPair:
    """Low-rank factors: p maps image features, q maps tag features."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        q = np.array(self.q, dtype=np.float64)
        if p.ndim != 2 or q.ndim != 2 or p.shape[1] != q.shape[1]:
            raise RefineError(f"factor shapes {p.shape} / {q.shape} are inconsistent")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise RefineError("factors contain non-finite entries")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def rank(self) -> int:
        return self.p.shape[1]


@dataclass(frozen=True)
class WeightMask:
    """Per-entry loss weights: 1 on annotated positions, 1 - mu elsewhere."""

    annotated: np.ndarray
    mu: float

    def __post_init__(self):
        a = np.array(self.annotated, dtype=bool)
        a.setflags(write=False)
        object.__setattr__(self, "annotated", a)
        if not 0.0 <= self.mu < 1.0:
            raise RefineError(f"mu must satisfy 0 <= mu < 1, got {self.mu}")

    @classmethod
    def from_tags(cls, tags: TagMatrix, mu: float) -> "WeightMask":
        return cls(annotated=tags.support(), mu=mu)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Elementwise product of x with the weight matrix."""
        return (1.0 - self.mu) * x + self.mu * np.where(self.annotated, x, 0.0)

    def weights(self) -> np.ndarray:
        return np.where(self.annotated, 1.0, 1.0 - self.mu)


def _check_dims(tags, v, t, l_v, l_s) -> None:
    problems = []
    if v.n_rows != tags.n_images:
        problems.append(f"image features have {v.n_rows} rows, tags have {tags.n_images} images")
    if t.n_rows != tags.n_tags:
        problems.append(f"tag features have {t.n_rows} rows, tags have {tags.n_tags} tags")
    if l_v.size != tags.n_images:
        problems.append(f"image Laplacian is {l_v.size}x{l_v.size}, expected {tags.n_images}")
    if l_s.size != tags.n_tags:
        problems.append(f"tag Laplacian is {l_s.size}x{l_s.size}, expected {tags.n_tags}")
    if problems:
        raise RefineError("; ".join(problems))


def _reconstruction(v, t, factors) -> np.ndarray:
    return (v.data @ factors.p) @ (t.data @ factors.q).T


def objective(
    tags: TagMatrix,
    v: FeatureMatrix,
    t: FeatureMatrix,
    factors: FactorPair,
    l_v: GraphLaplacian,
    l_s: GraphLaplacian,
    config: RefineConfig,
) -> float:
    """Evaluate the refinement objective at the given factors."""
    config.validate(v.dim, t.dim)
    _check_dims(tags, v, t, l_v, l_s)
    mask = WeightMask.from_tags(tags, config.mu)
    ohat = _reconstruction(v, t, factors)
    resid = ohat - tags.toarray()
    loss = float(np.sum(resid * mask.apply(resid)))
    reg1 = 0.5 * config.lambda1 * (float(np.sum(factors.p ** 2)) + float(np.sum(factors.q ** 2)))
    reg2 = 0.0
    if config.lambda2:
        reg2 = config.lambda2 * (
            float(np.sum(ohat * (l_v.matrix @ ohat))) + float(np.sum(ohat * (ohat @ l_s.matrix)))
        )
    return loss + reg1 + reg2


def gradient(
    tags: TagMatrix,
    v: FeatureMatrix,
    t: FeatureMatrix,
    factors: FactorPair,
    l_v: GraphLaplacian,
    l_s: GraphLaplacian,
    config: RefineConfig,
    free: str = "p",
) -> np.ndarray:
    """Analytic gradient of the objective with respect to the free factor."""
    if free not in ("p", "q"):
        raise RefineError(f"free factor must be 'p' or 'q', got {free!r}")
    config.validate(v.dim, t.dim)
    _check_dims(tags, v, t, l_v, l_s)
    mask = WeightMask.from_tags(tags, config.mu)
    ohat = _reconstruction(v, t, factors)
    inner = mask.apply(ohat - tags.toarray())
    if config.lambda2:
        inner = inner + config.lambda2 * (l_v.matrix @ ohat) + config.lambda2 * (ohat @ l_s.matrix)
    if free == "p":
        return 2.0 * v.data.T @ (inner @ (t.data @ factors.q)) + config.lambda1 * factors.p
    return 2.0 * t.data.T @ (inner.T @ (v.data @ factors.p)) + config.lambda1 * factors.q


def _cg(apply_a, b, x0, tol, max_iters):
    """Conjugate gradient for the matrix-shaped PSD system A x = b."""
    x = x0.copy()
    r = b - apply_a(x)
    p = r.copy()
    rs = float(np.sum(r * r))
    b_norm = float(np.linalg.norm(b))
    thresh = tol * b_norm if b_norm > 0 else tol
    if np.sqrt(rs) <= thresh:
        return x
    for _ in range(max_iters):
        ap = apply_a(p)
        p_ap = float(np.sum(p * ap))
        if p_ap <= 0.0:
            raise CgBreakdownError(
                "non-positive curvature in factor subproblem "
                f"(p^T A p = {p_ap:.3e}); check lambda1/lambda2/mu"
            )
        alpha = rs / p_ap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.sum(r * r))
        if np.sqrt(rs_new) <= thresh:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


@dataclass(frozen=True)
class SolveResult:
    factors: FactorPair
    objective_trace: np.ndarray
    converged: bool
    n_outer: int


def solve_alternating(
    tags: TagMatrix,
    v: FeatureMatrix,
    t: FeatureMatrix,
    l_v: GraphLaplacian,
    l_s: GraphLaplacian,
    config: RefineConfig,
    init: FactorPair | None = None,
) -> SolveResult:
    """Alternating minimization over P and Q with CG half-steps.

    Each half-step solves its convex quadratic from a warm start, so the
    recorded objective trace (initial value, then one entry per half-step)
    never increases beyond roundoff. Deterministic for a fixed seed.
    Passing init resumes from previously saved factors instead of the
    seeded Gaussian start.
    """
    config.validate(v.dim, t.dim)
    _check_dims(tags, v, t, l_v, l_s)
    mask = WeightMask.from_tags(tags, config.mu)
    o = tags.toarray()
    wo = mask.apply(o)
    if init is not None:
        if init.p.shape != (v.dim, config.rank) or init.q.shape != (t.dim, config.rank):
            raise RefineError(
                f"initial factors {init.p.shape}/{init.q.shape} do not match "
                f"features and rank ({v.dim}x{config.rank}, {t.dim}x{config.rank})"
            )
        p = init.p.copy()
        q = init.q.copy()
    else:
        rng = np.random.default_rng(config.seed)
        scale = 1.0 / np.sqrt(config.rank)
        p = rng.standard_normal((v.dim, config.rank)) * scale
        q = rng.standard_normal((t.dim, config.rank)) * scale

    lam1, lam2 = config.lambda1, config.lambda2
    lv, ls = l_v.matrix, l_s.matrix

    def regularized(s):
        m = mask.apply(s)
        if lam2:
            m = m + lam2 * (lv @ s) + lam2 * (s @ ls)
        return m

    def trace_objective(pp, qq):
        return objective(tags, v, t, FactorPair(pp, qq), l_v, l_s, config)

    trace = [trace_objective(p, q)]
    converged = False
    outer_done = 0
    for outer in range(config.outer_iters):
        b_mat = t.data @ q

        def apply_p(x):
            s = (v.data @ x) @ b_mat.T
            return 2.0 * v.data.T @ (regularized(s) @ b_mat) + lam1 * x

        rhs_p = 2.0 * v.data.T @ (wo @ b_mat)
        p = _cg(apply_p, rhs_p, p, config.cg_tol, config.cg_iters)
        trace.append(trace_objective(p, q))

        a_mat = v.data @ p

        def apply_q(x):
            s = a_mat @ (t.data @ x).T
            return 2.0 * t.data.T @ (regularized(s).T @ a_mat) + lam1 * x

        rhs_q = 2.0 * t.data.T @ (wo.T @ a_mat)
        q = _cg(apply_q, rhs_q, q, config.cg_tol, config.cg_iters)
        trace.append(trace_objective(p, q))

        outer_done = outer + 1
        prev, curr = trace[-3], trace[-1]
        if abs(prev - curr) <= config.obj_tol * max(abs(prev), 1e-12):
            converged = True
            break

    return SolveResult(
        factors=FactorPair(p, q),
        objective_trace=np.asarray(trace),
        converged=converged,
        n_outer=outer_done,
    )


@dataclass(frozen=True)
class RefineResult:
    """Raw refined scores plus the factors that produced them.

    scores keeps the unclamped reconstruction for ranking; tag_matrix()
    clamps into [0, 1] for export as annotation confidences.
    """

    scores: np.ndarray
    factors: FactorPair
    objective_trace: np.ndarray
    converged: bool

    def tag_matrix(self) -> TagMatrix:
        return TagMatrix.from_dense(np.clip(self.scores, 0.0, 1.0))


def refine(
    tags: TagMatrix,
    v: FeatureMatrix,
    t: FeatureMatrix,
    l_v: GraphLaplacian,
    l_s: GraphLaplacian,
    config: RefineConfig,
    init: FactorPair | None = None,
) -> RefineResult:
    """Solve for the factors and return the refined score matrix."""
    result = solve_alternating(tags, v, t, l_v, l_s, config, init=init)
    scores = _reconstruction(v, t, result.factors)
    return RefineResult(
        scores=scores,
        factors=result.factors,
        objective_trace=result.objective_trace,
        converged=result.converged,
    )


def apply_factors(v: FeatureMatrix, t: FeatureMatrix, factors: FactorPair) -> np.ndarray:
    """Score new rows inductively: V P Q^T T^T for features never seen in training."""
    if v.dim != factors.p.shape[0] or t.dim != factors.q.shape[0]:
        raise RefineError(
            f"features ({v.dim}, {t.dim}) do not match factors "
            f"({factors.p.shape[0]}, {factors.q.shape[0]})"
        )
    return (v.data @ factors.p) @ (t.data @ factors.q).T


def save_factors(factors: FactorPair, out_dir, prefix: str = "factors") -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    p_path = os.path.join(out_dir, f"{prefix}_p.mtx")
    q_path = os.path.join(out_dir, f"{prefix}_q.mtx")
    write_dense_matrix(p_path, factors.p)
    write_dense_matrix(q_path, factors.q)
    return p_path, q_path


def load_factors(p_path, q_path) -> FactorPair:
    return FactorPair(p=read_dense_matrix(p_path), q=read_dense_matrix(q_path))
