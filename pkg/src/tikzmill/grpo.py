"""Group-relative policy-gradient arithmetic over scored rollout groups.

For a group of G rollouts with rewards r_i, advantages are group-centered
(A_i = r_i - mean r by default; optional division by the group std). The
maximized objective over per-token probability ratios p_t = exp(new_t - old_t)
is

    J = 1/(L*G) * sum_i sum_t min(p_t * A_i, clip(p_t, 1-eps_low, 1+eps_high) * A_i)
        - beta * 1/(L*G) * sum_i sum_t k_t,

with a constant divisor L*G (L = max completion length), decoupled clip
thresholds, and truncated rollouts masked out of both sums while still
counting toward G and the advantage baseline. The optional KL term uses the
non-negative estimator k_t = exp(ref_t - new_t) - (ref_t - new_t) - 1.

grpo_gradient returns the analytic d J / d logp_new per token; finite
differences of grpo_objective verify it in the test suite.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class GrpoInputError(ValueError):
    pass


@dataclass
class Rollout:
    logp_new: np.ndarray
    logp_old: np.ndarray
    reward: float
    truncated: bool = False
    logp_ref: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.logp_new = _check_logp(self.logp_new, "logp_new")
        self.logp_old = _check_logp(self.logp_old, "logp_old")
        if self.logp_ref is not None:
            self.logp_ref = _check_logp(self.logp_ref, "logp_ref")
        t = len(self.logp_new)
        if len(self.logp_old) != t or (self.logp_ref is not None and len(self.logp_ref) != t):
            raise GrpoInputError("per-token log-prob vectors must share one length")
        if not np.isfinite(self.reward):
            raise GrpoInputError("reward must be finite")

    @property
    def token_count(self) -> int:
        return len(self.logp_new)


def _check_logp(vec, name: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise GrpoInputError(f"{name} must be a 1-D vector")
    if not np.isfinite(arr).all():
        raise GrpoInputError(f"{name} entries must be finite")
    if np.any(arr > 0.0):
        raise GrpoInputError(f"{name} entries must be log-probabilities (<= 0)")
    return arr


@dataclass
class GrpoConfig:
    eps_low: float = 0.2
    eps_high: float = 0.28
    beta: float = 0.0
    max_completion_length: int = 1024
    scale_by_std: bool = False
    mask_truncated: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.eps_low < 1.0):
            raise GrpoInputError("eps_low must be in (0, 1)")
        if self.eps_high < self.eps_low:
            raise GrpoInputError("eps_high must be >= eps_low")
        if self.max_completion_length < 1:
            raise GrpoInputError("max_completion_length must be positive")
        if self.beta < 0.0:
            raise GrpoInputError("beta must be non-negative")


@dataclass
class GroupResult:
    advantages: np.ndarray
    objective: float
    per_token_terms: list[np.ndarray] = field(default_factory=list)


def group_advantages(rewards: Sequence[float], scale_by_std: bool = False) -> np.ndarray:
    """Center rewards on the group mean; optionally divide by the group std.

    A zero-std group yields all-zero advantages rather than a division error:
    degenerate groups carry no learning signal.
    """
    arr = np.asarray(rewards, dtype=np.float64)
    if arr.ndim != 1 or len(arr) < 2:
        raise GrpoInputError("a rollout group needs at least two rewards")
    centered = arr - arr.mean()
    if not scale_by_std:
        return centered
    std = arr.std()
    if std == 0.0:
        return np.zeros_like(arr)
    return centered / std


def clipped_token_term(
    logp_new_t: float, logp_old_t: float, advantage: float, cfg: GrpoConfig
) -> float:
    """min(ratio * A, clip(ratio, 1-eps_low, 1+eps_high) * A) for one token."""
    ratio = np.exp(logp_new_t - logp_old_t)
    clipped = min(max(ratio, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high)
    return float(min(ratio * advantage, clipped * advantage))


def _validate_group(group: Sequence[Rollout], cfg: GrpoConfig) -> None:
    if len(group) < 2:
        raise GrpoInputError("a rollout group needs at least two rollouts")
    longest = max(r.token_count for r in group)
    if cfg.max_completion_length < longest:
        raise GrpoInputError(
            f"max_completion_length {cfg.max_completion_length} < longest rollout {longest}"
        )
    if cfg.beta > 0.0 and any(r.logp_ref is None for r in group):
        raise GrpoInputError("beta > 0 requires logp_ref on every rollout")


def grpo_objective(group: Sequence[Rollout], cfg: GrpoConfig) -> GroupResult:
    group = list(group)
    _validate_group(group, cfg)
    g = len(group)
    norm = 1.0 / (cfg.max_completion_length * g)
    advantages = group_advantages([r.reward for r in group], cfg.scale_by_std)

    total = 0.0
    per_token: list[np.ndarray] = []
    for rollout, adv in zip(group, advantages):
        if cfg.mask_truncated and rollout.truncated:
            per_token.append(np.zeros(rollout.token_count))
            continue
        ratio = np.exp(rollout.logp_new - rollout.logp_old)
        clipped = np.clip(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high)
        terms = np.minimum(ratio * adv, clipped * adv)
        if cfg.beta > 0.0:
            delta = rollout.logp_ref - rollout.logp_new
            terms = terms - cfg.beta * (np.exp(delta) - delta - 1.0)
        per_token.append(terms)
        total += float(terms.sum())
    return GroupResult(advantages=advantages, objective=total * norm, per_token_terms=per_token)


def grpo_gradient(group: Sequence[Rollout], cfg: GrpoConfig) -> list[np.ndarray]:
    """d objective / d logp_new_t per rollout token.

    On the branch where the unclipped product attains the min (ties included)
    the derivative is ratio * A / (L*G); where the clipped constant is strictly
    smaller it is zero. Masked rollouts contribute zeros everywhere.
    """
    group = list(group)
    _validate_group(group, cfg)
    g = len(group)
    norm = 1.0 / (cfg.max_completion_length * g)
    advantages = group_advantages([r.reward for r in group], cfg.scale_by_std)

    grads: list[np.ndarray] = []
    for rollout, adv in zip(group, advantages):
        if cfg.mask_truncated and rollout.truncated:
            grads.append(np.zeros(rollout.token_count))
            continue
        ratio = np.exp(rollout.logp_new - rollout.logp_old)
        clipped = np.clip(ratio, 1.0 - cfg.eps_low, 1.0 + cfg.eps_high)
        unclipped_active = ratio * adv <= clipped * adv
        grad = np.where(unclipped_active, ratio * adv, 0.0) * norm
        if cfg.beta > 0.0:
            # d/d logp_new of -(beta) * (exp(ref-new) - (ref-new) - 1)
            grad = grad + cfg.beta * norm * (np.exp(rollout.logp_ref - rollout.logp_new) - 1.0)
        grads.append(grad)
    return grads


# --- interchange formats ----------------------------------------------------

_MAGIC = b"TMGRPO01"


def rollout_to_dict(r: Rollout) -> dict:
    out = {
        "reward": r.reward,
        "truncated": r.truncated,
        "logp_new": [float(np.float32(v)) for v in r.logp_new],
        "logp_old": [float(np.float32(v)) for v in r.logp_old],
    }
    if r.logp_ref is not None:
        out["logp_ref"] = [float(np.float32(v)) for v in r.logp_ref]
    return out


def rollout_from_dict(obj: dict) -> Rollout:
    return Rollout(
        logp_new=np.asarray(obj["logp_new"], dtype=np.float64),
        logp_old=np.asarray(obj["logp_old"], dtype=np.float64),
        logp_ref=np.asarray(obj["logp_ref"], dtype=np.float64) if obj.get("logp_ref") else None,
        reward=float(obj["reward"]),
        truncated=bool(obj.get("truncated", False)),
    )


def write_groups_jsonl(groups: dict[str, list[Rollout]], path: str | Path) -> None:
    with open(path, "w") as fh:
        for gid in groups:
            obj = {"group_id": gid, "rollouts": [rollout_to_dict(r) for r in groups[gid]]}
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_groups_jsonl(path: str | Path) -> dict[str, list[Rollout]]:
    groups: dict[str, list[Rollout]] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            groups[obj["group_id"]] = [rollout_from_dict(r) for r in obj["rollouts"]]
    return groups


def write_groups_binary(groups: dict[str, list[Rollout]], path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(groups)))
        for gid, rollouts in groups.items():
            gid_bytes = gid.encode("utf-8")
            fh.write(struct.pack("<I", len(gid_bytes)))
            fh.write(gid_bytes)
            fh.write(struct.pack("<I", len(rollouts)))
            for r in rollouts:
                t = r.token_count
                has_ref = r.logp_ref is not None
                fh.write(struct.pack("<IfBB", t, r.reward, int(r.truncated), int(has_ref)))
                fh.write(np.asarray(r.logp_new, dtype="<f4").tobytes())
                fh.write(np.asarray(r.logp_old, dtype="<f4").tobytes())
                if has_ref:
                    fh.write(np.asarray(r.logp_ref, dtype="<f4").tobytes())


def read_groups_binary(path: str | Path) -> dict[str, list[Rollout]]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise GrpoInputError("bad rollout-group file magic")
    pos = 8
    (n_groups,) = struct.unpack_from("<I", data, pos)
    pos += 4
    groups: dict[str, list[Rollout]] = {}
    for _ in range(n_groups):
        (id_len,) = struct.unpack_from("<I", data, pos)
        pos += 4
        gid = data[pos : pos + id_len].decode("utf-8")
        pos += id_len
        (g,) = struct.unpack_from("<I", data, pos)
        pos += 4
        rollouts: list[Rollout] = []
        for _ in range(g):
            t, reward, truncated, has_ref = struct.unpack_from("<IfBB", data, pos)
            pos += struct.calcsize("<IfBB")
            vecs = []
            for _ in range(3 if has_ref else 2):
                vecs.append(np.frombuffer(data, dtype="<f4", count=t, offset=pos).astype(np.float64))
                pos += 4 * t
            rollouts.append(
                Rollout(
                    logp_new=vecs[0],
                    logp_old=vecs[1],
                    logp_ref=vecs[2] if has_ref else None,
                    reward=float(reward),
                    truncated=bool(truncated),
                )
            )
        groups[gid] = rollouts
    return groups


def score_groups(
    groups: dict[str, list[Rollout]], cfg: GrpoConfig, with_gradients: bool = True
) -> dict[str, dict]:
    """Batch interface: advantages, objective, and optionally gradients per group."""
    out: dict[str, dict] = {}
    for gid, rollouts in groups.items():
        result = grpo_objective(rollouts, cfg)
        entry = {
            "advantages": [float(a) for a in result.advantages],
            "objective": result.objective,
        }
        if with_gradients:
            entry["gradients"] = [
                [float(v) for v in grad] for grad in grpo_gradient(rollouts, cfg)
            ]
        out[gid] = entry
    return out
