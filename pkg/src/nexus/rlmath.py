"""
Training mathematics on small dense arrays.

SFT token loss, the 0.9 outcome + 0.1 format reward, group-normalized
advantages, the asymmetrically clipped group-relative surrogate objective
(and its analytic gradient), best-of-n selection and SFT dataset export.
Nothing here updates parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Protocol

import numpy as np
import numpy.typing as npt
import pandas as pd
from pydantic import BaseModel, ConfigDict, computed_field

from nexus.constants import defaults
from nexus.constants.enums import ObjectiveForm
from nexus.constants.keywords import SFT_FORMAT, SFT_FORMAT_VERSION
from nexus.constants.regexps import NUMBER_RE
from nexus.utils import canonical_json

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from nexus.trace import SubTaskResult

FloatArray = npt.NDArray[np.float64]


def _as_arrays(batch: Sequence[npt.ArrayLike]) -> list[FloatArray]:
    return [np.asarray(x, dtype=np.float64).reshape(-1) for x in batch]


# --------------------------------------------------------------------- #
# SFT                                                                   #
# --------------------------------------------------------------------- #
def sft_loss(token_logprobs: Sequence[npt.ArrayLike]) -> float:
    """Batch mean of the per-trajectory mean token negative log-likelihood."""
    arrays = _as_arrays(token_logprobs)
    if not arrays:
        msg = "empty batch"
        raise ValueError(msg)
    if any(a.size == 0 for a in arrays):
        msg = "every trajectory needs at least one token"
        raise ValueError(msg)
    return float(np.mean([-a.mean() for a in arrays]))


# --------------------------------------------------------------------- #
# Rewards                                                               #
# --------------------------------------------------------------------- #
class Grader(Protocol):
    def __call__(self, answer: str) -> bool: ...


@dataclass(slots=True, frozen=True)
class NumericGrader:
    """
    Correct when the answer's last number is within ``rel_tol`` of the
    expected one; non-numeric expectations need an exact (case-folded) match.
    """

    expected: str
    rel_tol: float = 1e-3

    def __call__(self, answer: str) -> bool:
        wanted = NUMBER_RE.fullmatch(self.expected.strip())
        if wanted is None:
            return answer.strip().casefold() == self.expected.strip().casefold()
        numbers = NUMBER_RE.findall(answer)
        if not numbers:
            return False
        got, target = float(numbers[-1]), float(wanted.group(0))
        return math.isclose(got, target, rel_tol=self.rel_tol)


class RewardBreakdown(BaseModel):
    model_config = ConfigDict(frozen=True)

    outcome: float = 0.0
    formatting: float = 0.0

    @computed_field  # type: ignore[prop-decorator]
    @property
    def total(self) -> float:
        return round(self.outcome + self.formatting, 10)


def compute_reward(result: SubTaskResult, grader: Grader) -> RewardBreakdown:
    """
    Outcome reward iff the solution-tag answer is correct; format reward iff
    code ran through tags and the answer came in solution tags.
    """
    correct = result.solution_text is not None and grader(result.solution_text)
    return RewardBreakdown(
        outcome=defaults.OUTCOME_REWARD if correct else 0.0,
        formatting=defaults.FORMAT_REWARD if result.format_ok else 0.0,
    )


# --------------------------------------------------------------------- #
# Group-relative objective                                              #
# --------------------------------------------------------------------- #
def group_advantages(
    rewards: Sequence[float] | npt.ArrayLike,
    eps_norm: float = defaults.EPS_NORM,
) -> FloatArray:
    """(R_i - mean) / (population std + eps_norm)."""
    values = np.asarray(rewards, dtype=np.float64).reshape(-1)
    if values.size == 0:
        msg = "rewards must not be empty"
        raise ValueError(msg)
    return (values - values.mean()) / (values.std(ddof=0) + eps_norm)


@dataclass(slots=True, frozen=True)
class ClipConfig:
    eps_low: float = defaults.EPS_LOW
    eps_high: float = defaults.EPS_HIGH
    beta: float = 0.0
    objective_form: ObjectiveForm = ObjectiveForm.TOKEN_POOLED

    def __post_init__(self) -> None:
        if self.eps_low <= 0 or self.eps_high <= 0:
            msg = "eps_low and eps_high must be positive"
            raise ValueError(msg)
        if self.beta < 0:
            msg = "beta must not be negative"
            raise ValueError(msg)
        per_trajectory = self.objective_form is ObjectiveForm.PER_TRAJECTORY_MEAN
        if self.beta > 0 and not per_trajectory:
            msg = "a KL penalty needs the per_trajectory_mean objective"
            raise ValueError(msg)


@dataclass(slots=True, frozen=True)
class RolloutGroup:
    """Token log-probs of G rollouts under the new, old and reference policies."""

    logp_new: list[FloatArray]
    logp_old: list[FloatArray]
    rewards: FloatArray
    logp_ref: list[FloatArray] | None = None
    eps_norm: float = defaults.EPS_NORM

    @classmethod
    def of(
        cls,
        logp_new: Sequence[npt.ArrayLike],
        logp_old: Sequence[npt.ArrayLike],
        rewards: Sequence[float],
        logp_ref: Sequence[npt.ArrayLike] | None = None,
        eps_norm: float = defaults.EPS_NORM,
    ) -> RolloutGroup:
        return cls(
            logp_new=_as_arrays(logp_new),
            logp_old=_as_arrays(logp_old),
            rewards=np.asarray(rewards, dtype=np.float64).reshape(-1),
            logp_ref=_as_arrays(logp_ref) if logp_ref is not None else None,
            eps_norm=eps_norm,
        )

    def __post_init__(self) -> None:
        size = len(self.logp_new)
        if size < 1:
            msg = "a group needs at least one rollout"
            raise ValueError(msg)
        others = [self.logp_old]
        if self.logp_ref is not None:
            others.append(self.logp_ref)
        if any(len(o) != size for o in others) or self.rewards.size != size:
            msg = "log-prob arrays and rewards must cover the same rollouts"
            raise ValueError(msg)
        for i, new in enumerate(self.logp_new):
            if new.size == 0:
                msg = f"rollout {i} has no tokens"
                raise ValueError(msg)
            if any(o[i].shape != new.shape for o in others):
                msg = f"rollout {i}: log-prob shapes differ"
                raise ValueError(msg)

    @property
    def size(self) -> int:
        return len(self.logp_new)

    def advantages(self) -> FloatArray:
        return group_advantages(self.rewards, self.eps_norm)


def _weights(group: RolloutGroup, cfg: ClipConfig) -> list[float]:
    if cfg.objective_form is ObjectiveForm.TOKEN_POOLED:
        total = sum(a.size for a in group.logp_new)
        return [1.0 / total] * group.size
    return [1.0 / (group.size * a.size) for a in group.logp_new]


def token_terms(group: RolloutGroup, cfg: ClipConfig) -> list[FloatArray]:
    """Per-token min(r A, clip(r) A) for every rollout."""
    terms = []
    advantages = group.advantages()
    for new, old, adv in zip(group.logp_new, group.logp_old, advantages, strict=True):
        ratio = np.exp(new - old)
        clipped = np.clip(ratio, 1 - cfg.eps_low, 1 + cfg.eps_high)
        terms.append(np.minimum(ratio * adv, clipped * adv))
    return terms


def _kl(new: FloatArray, ref: FloatArray) -> FloatArray:
    delta = ref - new
    return np.exp(delta) - delta - 1


def surrogate_objective(group: RolloutGroup, cfg: ClipConfig | None = None) -> float:
    """
    Clipped group-relative surrogate.

    ``token_pooled`` averages over all tokens of the group; with
    ``per_trajectory_mean`` each rollout is averaged first, then the group,
    with the per-token KL penalty to the reference policy when beta > 0.
    """
    cfg = cfg or ClipConfig()
    terms = token_terms(group, cfg)
    if cfg.beta > 0:
        if group.logp_ref is None:
            msg = "beta > 0 needs reference log-probs"
            raise ValueError(msg)
        terms = [
            t - cfg.beta * _kl(new, ref)
            for t, new, ref in zip(terms, group.logp_new, group.logp_ref, strict=True)
        ]
    weights = _weights(group, cfg)
    return float(sum(w * t.sum() for w, t in zip(weights, terms, strict=True)))


def surrogate_gradient(
    group: RolloutGroup,
    cfg: ClipConfig | None = None,
) -> list[FloatArray]:
    """Analytic gradient of :func:`surrogate_objective` with respect to ``logp_new``."""
    cfg = cfg or ClipConfig()
    grads = []
    for i, (new, old, adv) in enumerate(
        zip(group.logp_new, group.logp_old, group.advantages(), strict=True)
    ):
        ratio = np.exp(new - old)
        # the min picks the constant clipped branch on one side of the range only
        above = (ratio > 1 + cfg.eps_high) & (adv > 0)
        below = (ratio < 1 - cfg.eps_low) & (adv < 0)
        flat = above | below
        grad = np.where(flat, 0.0, ratio * adv)
        if cfg.beta > 0 and group.logp_ref is not None:
            grad = grad + cfg.beta * (np.exp(group.logp_ref[i] - new) - 1)
        grads.append(grad)
    return [w * g for w, g in zip(_weights(group, cfg), grads, strict=True)]


# --------------------------------------------------------------------- #
# Rejection sampling                                                    #
# --------------------------------------------------------------------- #
def select_best_rollout(rewards: Sequence[float]) -> int:
    """Index of the highest reward; the lowest index wins ties."""
    if len(rewards) == 0:
        msg = "no rollouts to select from"
        raise ValueError(msg)
    return int(np.argmax(np.asarray(rewards, dtype=np.float64)))


@dataclass(slots=True, frozen=True)
class SftCandidate:
    task_id: str
    query: str
    text: str
    reward: float


def export_sft_dataset(
    candidates: Iterable[SftCandidate],
    out: Path,
    min_reward: float = 0.0,
) -> int:
    """
    Write the best rollout of every task whose reward reaches ``min_reward``.

    The file starts with a header record and lists tasks by id; identical
    inputs give byte-identical files. Returns the number of records.
    """
    frame = pd.DataFrame(
        [(c.task_id, c.query, c.text, c.reward) for c in candidates],
        columns=["task_id", "query", "text", "reward"],
    )
    lines = [
        canonical_json(
            {
                "format": SFT_FORMAT,
                "version": SFT_FORMAT_VERSION,
                "min_reward": min_reward,
            },
        ),
    ]
    if not frame.empty:
        best = frame.loc[
            frame.groupby("task_id", sort=True)["reward"].agg(
                lambda s: s.index[select_best_rollout(s.tolist())],
            )
        ]
        best = best[best["reward"] >= min_reward]
        lines += [
            canonical_json(
                {
                    "task_id": row.task_id,
                    "query": row.query,
                    "text": row.text,
                    "reward": float(row.reward),
                },
            )
            for row in best.itertuples(index=False)
        ]

    out = Path(out)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines) - 1
