"""Reward signals for rendered-figure rollouts.

The semantic reward compares two figures through their patch-embedding sets:
cosine distances between all patch pairs form the ground cost, an optimal
transport plan with uniform marginals moves one set onto the other, and the
reward is one minus the average transported distance,

    reward(x, y) = 1 - sum_ij F_ij D_ij / sum_ij F_ij,      D_ij = 1 - cos(x_i, y_j),

where F minimizes the transport cost subject to row sums 1/|x| and column
sums 1/|y|. Since the flow totals one, the reward equals 1 - cost. Cosines can
be negative, so the raw value lives in [-1, 1]; by default it is clamped into
[0, 1] and the raw value stays available through similarity_reward_detail.

The format reward is the binary document-shape predicate, and rollout_reward
composes format check -> compile -> embedding similarity with zeros for
non-conforming or uncompilable code.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .transport import TransportPlan, solve_transport_entropic, solve_transport_exact

SOLVER_EXACT = "exact_transportation"
SOLVER_ENTROPIC = "entropic_approximation"


class EmbeddingError(ValueError):
    """Invalid patch-embedding input (shape mismatch, zero vector, non-finite)."""


@dataclass
class PatchEmbeddingSet:
    """Ordered set of fixed-dimension patch vectors for one rendered figure."""

    patches: np.ndarray  # (count, dim)

    def __post_init__(self) -> None:
        arr = np.asarray(self.patches, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise EmbeddingError("patch embeddings must form a non-empty 2-D array")
        if not np.isfinite(arr).all():
            raise EmbeddingError("patch embeddings must be finite")
        norms = np.linalg.norm(arr, axis=1)
        if np.any(norms == 0.0):
            raise EmbeddingError("zero patch vectors are rejected at ingest")
        self.patches = arr

    @property
    def count(self) -> int:
        return self.patches.shape[0]

    @property
    def dim(self) -> int:
        return self.patches.shape[1]


@dataclass
class RewardConfig:
    clamp_to_unit: bool = True
    solver: str = SOLVER_EXACT
    entropic_epsilon: float = 0.05

    def __post_init__(self) -> None:
        if self.solver not in (SOLVER_EXACT, SOLVER_ENTROPIC):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.solver == SOLVER_ENTROPIC and self.entropic_epsilon <= 0:
            raise ValueError("entropic_epsilon must be positive")


DEFAULT_REWARD_CONFIG = RewardConfig()


def cosine_distance_matrix(x: PatchEmbeddingSet, y: PatchEmbeddingSet) -> np.ndarray:
    """Pairwise 1 - cosine(x_i, y_j); entries lie in [0, 2]."""
    if x.dim != y.dim:
        raise EmbeddingError(f"dimension mismatch: {x.dim} vs {y.dim}")
    xn = x.patches / np.linalg.norm(x.patches, axis=1, keepdims=True)
    yn = y.patches / np.linalg.norm(y.patches, axis=1, keepdims=True)
    dist = 1.0 - xn @ yn.T
    return np.clip(dist, 0.0, 2.0)


def solve_emd(dist: np.ndarray, cfg: RewardConfig = DEFAULT_REWARD_CONFIG) -> TransportPlan:
    """Optimal (or, for the entropic solver, near-optimal) uniform-marginal flow."""
    if cfg.solver == SOLVER_ENTROPIC:
        return solve_transport_entropic(dist, cfg.entropic_epsilon)
    return solve_transport_exact(dist)


@dataclass
class RewardDetail:
    reward: float  # clamped per config
    raw: float  # 1 - cost, before clamping
    cost: float
    plan: TransportPlan


def similarity_reward_detail(
    x: PatchEmbeddingSet,
    y: PatchEmbeddingSet,
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> RewardDetail:
    dist = cosine_distance_matrix(x, y)
    plan = solve_emd(dist, cfg)
    total = float(plan.flow.sum())
    raw = 1.0 - plan.cost / total
    reward = min(max(raw, 0.0), 1.0) if cfg.clamp_to_unit else raw
    return RewardDetail(reward=reward, raw=raw, cost=plan.cost, plan=plan)


def similarity_reward(
    x: PatchEmbeddingSet,
    y: PatchEmbeddingSet,
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> float:
    return similarity_reward_detail(x, y, cfg).reward


_DOCCLASS = "\\documentclass[tikz]{standalone}"
_BEGIN_DOC = "\\begin{document}"
_END_DOC = "\\end{document}"


def format_reward(code: str) -> int:
    """1 iff code starts with the standalone class line, contains a document
    body opener after it, and ends with the document terminator; else 0."""
    s = code.strip()
    if not s.startswith(_DOCCLASS):
        return 0
    if not s.endswith(_END_DOC):
        return 0
    begin = s.find(_BEGIN_DOC, len(_DOCCLASS))
    if begin < 0 or begin >= len(s) - len(_END_DOC):
        return 0
    return 1


@dataclass
class RolloutScore:
    reward: float
    raw: Optional[float]
    format_ok: bool
    compile_status: Optional[str]
    provider_name: Optional[str] = None
    embedding_dim: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "reward": self.reward,
            "raw": self.raw,
            "format_ok": self.format_ok,
            "compile_status": self.compile_status,
            "provider": self.provider_name,
            "embedding_dim": self.embedding_dim,
        }


def rollout_reward_detail(
    code: str,
    gt: PatchEmbeddingSet,
    provider,
    compile_fn: Callable[[str], "object"],
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> RolloutScore:
    """Full rollout scoring: format gate, compile gate, then embedding similarity.

    ``provider`` follows the embedding-provider contract (``embed(image_path)``
    plus ``name``/``dim``); provider failures propagate so the caller can mark
    the rollout unscored instead of assigning a zero.
    """
    if format_reward(code) == 0:
        return RolloutScore(0.0, None, False, None)
    result = compile_fn(code)
    if result.status != "ok":
        return RolloutScore(0.0, None, True, result.status)
    embedded = PatchEmbeddingSet(provider.embed(result.artifact_path))
    detail = similarity_reward_detail(embedded, gt, cfg)
    return RolloutScore(
        reward=detail.reward,
        raw=detail.raw,
        format_ok=True,
        compile_status=result.status,
        provider_name=getattr(provider, "name", provider.__class__.__name__),
        embedding_dim=embedded.dim,
    )


def rollout_reward(
    code: str,
    gt: PatchEmbeddingSet,
    provider,
    compile_fn: Callable[[str], "object"],
    cfg: RewardConfig = DEFAULT_REWARD_CONFIG,
) -> float:
    return rollout_reward_detail(code, gt, provider, compile_fn, cfg).reward
