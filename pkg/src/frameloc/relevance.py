"""Frame-question relevance scoring and frame subset selection.

Scores are cosine similarities between frame and question vectors. Subset
selection maximizes the facility-location objective: the sum over questions
of the best score any selected frame achieves for that question. The
objective is monotone submodular, so the greedy solver carries the usual
(1 - 1/e) guarantee relative to the exact optimum.
"""

from __future__ import annotations

import math
from itertools import combinations
from typing import Iterable, Literal

import numpy as np

from .datamodel import EmbeddingMatrix, Projector, RelevanceMatrix

__all__ = [
    "cosine",
    "relevance_matrix",
    "relevance_to_tsv",
    "localize_top1",
    "subset_objective",
    "select_frames",
    "fit_projector",
    "apply_projector",
]

# Exact selection enumerates C(n, k) subsets; refuse beyond this.
EXACT_GUARD = 1_000_000


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine is undefined for zero-norm vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _unit_rows(m: EmbeddingMatrix, role: str) -> np.ndarray:
    values = m.values.astype(np.float64)
    norms = np.linalg.norm(values, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"{role} {m.ids[int(zero[0])]!r} has a zero-norm vector")
    return values / norms[:, None]


def relevance_matrix(frames: EmbeddingMatrix, questions: EmbeddingMatrix) -> RelevanceMatrix:
    """All pairwise frame-question cosine scores for one video."""
    if frames.dim != questions.dim:
        raise ValueError(
            f"dimension mismatch: frames have dim {frames.dim}, "
            f"questions have dim {questions.dim}"
        )
    scores = _unit_rows(frames, "frame") @ _unit_rows(questions, "question").T
    np.clip(scores, -1.0, 1.0, out=scores)
    return RelevanceMatrix(frames.ids, questions.ids, scores)


def relevance_to_tsv(r: RelevanceMatrix) -> str:
    """Tab-separated export: question ids as header, one row per frame."""
    lines = ["\t".join(("frame_id", *r.question_ids))]
    for i, frame_id in enumerate(r.frame_ids):
        lines.append("\t".join((frame_id, *(f"{s:.6f}" for s in r.scores[i]))))
    return "\n".join(lines) + "\n"


def localize_top1(r: RelevanceMatrix, question_id: str) -> int:
    """Index of the highest-scoring frame for the question; ties go low."""
    column = r.column(question_id)
    if column.size == 0:
        raise ValueError("relevance matrix has no frames")
    return int(np.argmax(column))


def subset_objective(r: RelevanceMatrix, indices: Iterable[int]) -> float:
    """Facility-location value of a frame subset; empty subsets score 0."""
    idx = list(indices)
    if not idx:
        return 0.0
    return float(r.scores[idx].max(axis=0).sum())


def _select_exact(scores: np.ndarray, k: int) -> list[int]:
    n = scores.shape[0]
    n_subsets = math.comb(n, k)
    if n_subsets > EXACT_GUARD:
        raise ValueError(
            f"exact selection over C({n}, {k}) = {n_subsets} subsets exceeds "
            f"the guard of {EXACT_GUARD}; use the greedy method"
        )
    best: tuple[int, ...] | None = None
    best_value = -np.inf
    # combinations() yields index sets in lexicographic order, so keeping
    # only strict improvements makes ties resolve to the smallest set.
    for combo in combinations(range(n), k):
        value = scores[list(combo)].max(axis=0).sum()
        if value > best_value:
            best_value = value
            best = combo
    assert best is not None
    return list(best)


def _select_greedy(scores: np.ndarray, k: int) -> list[int]:
    n, _ = scores.shape
    selected: list[int] = []
    first = int(np.argmax(scores.sum(axis=1)))
    selected.append(first)
    covered = scores[first].copy()
    for _ in range(k - 1):
        gains = np.maximum(scores, covered).sum(axis=1) - covered.sum()
        gains[selected] = -np.inf
        pick = int(np.argmax(gains))
        selected.append(pick)
        covered = np.maximum(covered, scores[pick])
    return selected


def select_frames(
    r: RelevanceMatrix,
    k: int,
    method: Literal["exact", "greedy"] = "greedy",
) -> list[int]:
    """Pick up to k frame indices maximizing the facility-location objective.

    ``exact`` enumerates all subsets (guarded) and returns the true optimum
    in ascending index order, ties broken lexicographically. ``greedy``
    returns the standard marginal-gain selection in pick order, ties broken
    by smallest index.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = len(r.frame_ids)
    if n == 0:
        return []
    k = min(k, n)
    if method == "exact":
        return _select_exact(r.scores, k)
    if method == "greedy":
        return _select_greedy(r.scores, k)
    raise ValueError(f"unknown selection method {method!r}")


def fit_projector(
    inputs: EmbeddingMatrix,
    targets: EmbeddingMatrix,
    ridge: float = 0.0,
) -> Projector:
    """Closed-form least squares fit of a linear map plus bias.

    Minimizes sum ||W z + b - h||^2 + ridge * ||W||_F^2 over paired rows.
    The bias is not penalized, so the fit reduces to ridge regression on
    mean-centered data. Rows pair by id; order may differ.
    """
    if ridge < 0:
        raise ValueError(f"ridge must be non-negative, got {ridge}")
    if inputs.count != targets.count or inputs.count < 1:
        raise ValueError(
            f"need equal non-zero sample counts, got {inputs.count} inputs "
            f"and {targets.count} targets"
        )
    if inputs.ids != targets.ids:
        if set(inputs.ids) != set(targets.ids):
            raise ValueError("input and target ids do not correspond")
        targets = targets.select(inputs.ids)

    x = inputs.values.astype(np.float64)
    y = targets.values.astype(np.float64)
    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ xc + ridge * np.eye(inputs.dim)
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise ValueError(
            "singular normal equations: the centered inputs do not span the "
            "feature space; pass ridge > 0"
        ) from None
    weights = np.linalg.solve(gram, xc.T @ yc).T
    bias = y_mean - weights @ x_mean
    return Projector(weights, bias)


def apply_projector(p: Projector, z: EmbeddingMatrix) -> EmbeddingMatrix:
    """Map every row through h = W z + b, preserving ids."""
    if z.dim != p.d_in:
        raise ValueError(f"dimension mismatch: vectors have dim {z.dim}, projector expects {p.d_in}")
    projected = z.values.astype(np.float64) @ p.weights.T + p.bias
    return EmbeddingMatrix(z.ids, projected.astype(np.float32))
