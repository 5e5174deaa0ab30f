"""Unit tests for rlmath.py."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from nexus.constants.enums import ObjectiveForm, SubTaskStatus
from nexus.rlmath import (
    ClipConfig,
    NumericGrader,
    RolloutGroup,
    SftCandidate,
    compute_reward,
    export_sft_dataset,
    group_advantages,
    select_best_rollout,
    sft_loss,
    surrogate_gradient,
    surrogate_objective,
    token_terms,
)
from nexus.trace import SubTaskResult

EPS_LOW, EPS_HIGH = 0.2, 0.28


# --------------------------------------------------------------------- #
# SFT loss                                                              #
# --------------------------------------------------------------------- #
def test_sft_loss_uniform_quarter_is_ln4() -> None:
    assert sft_loss([np.log([0.25] * 4)]) == pytest.approx(math.log(4), abs=1e-9)


def test_sft_loss_perfect_fit_is_zero() -> None:
    assert sft_loss([[0.0, 0.0], [0.0]]) == 0.0


def test_sft_loss_averages_per_trajectory_first() -> None:
    # means 1 and 3, not the pooled 2.5
    assert sft_loss([[-1.0], [-3.0, -3.0, -3.0]]) == pytest.approx(2.0)


@pytest.mark.parametrize("batch", [[], [[]]])
def test_sft_loss_rejects_empty_input(batch: list) -> None:
    with pytest.raises(ValueError):
        sft_loss(batch)


# --------------------------------------------------------------------- #
# Rewards                                                               #
# --------------------------------------------------------------------- #
@pytest.mark.parametrize(
    ("solution", "format_ok", "outcome", "formatting", "total"),
    [
        ("347.7", True, 0.9, 0.1, 1.0),
        ("347.7", False, 0.9, 0.0, 0.9),
        ("12.0", True, 0.0, 0.1, 0.1),
        (None, False, 0.0, 0.0, 0.0),
    ],
)
def test_reward_truth_table(
    solution: str | None,
    format_ok: bool,
    outcome: float,
    formatting: float,
    total: float,
) -> None:
    status = SubTaskStatus.SOLVED if solution is not None else SubTaskStatus.FAILED
    result = SubTaskResult(
        subtask_id="r",
        status=status,
        solution_text=solution,
        format_ok=format_ok,
    )
    reward = compute_reward(result, NumericGrader("347.7"))
    got = (reward.outcome, reward.formatting, reward.total)
    assert got == (outcome, formatting, total)


@pytest.mark.parametrize(
    ("expected", "answer", "correct"),
    [
        ("347.7", "The temperature is 347.7 K", True),
        ("347.7", "347.76", True),
        ("347.7", "350", False),
        ("347.7", "no number", False),
        ("1e-3", "0.001", True),
        ("PBE", " pbe ", True),
        ("PBE", "HSE06", False),
    ],
)
def test_numeric_grader(expected: str, answer: str, correct: bool) -> None:
    assert NumericGrader(expected)(answer) is correct


# --------------------------------------------------------------------- #
# Advantages and surrogate                                              #
# --------------------------------------------------------------------- #
def test_group_advantages_are_normalized() -> None:
    assert group_advantages([1, 1, 0.1, 0.1]) == pytest.approx([1, 1, -1, -1], abs=1e-6)
    assert group_advantages([0.5, 0.5, 0.5]) == pytest.approx([0, 0, 0])


def _single_token_group(
    log_ratio: float,
    rewards: list[float],
    rollout: int = 0,
) -> RolloutGroup:
    new = [[0.0] for _ in rewards]
    new[rollout] = [log_ratio]
    return RolloutGroup.of(new, [[0.0] for _ in rewards], rewards, eps_norm=0.0)


def test_hand_case_positive_advantage_is_clipped_high() -> None:
    # rewards [1, 0, 0, 0, 0] give the first rollout an advantage of +2
    group = _single_token_group(math.log(1.5), [1, 0, 0, 0, 0])
    assert group.advantages()[0] == pytest.approx(2.0, abs=1e-12)
    term = token_terms(group, ClipConfig())[0][0]
    assert term == pytest.approx(2.56, abs=1e-12)


def test_hand_case_negative_advantage_is_clipped_low() -> None:
    group = _single_token_group(math.log(0.5), [0, 1])
    assert group.advantages()[0] == pytest.approx(-1.0, abs=1e-12)
    term = token_terms(group, ClipConfig())[0][0]
    assert term == pytest.approx(-0.8, abs=1e-12)


def test_negative_advantage_with_a_large_ratio_is_unbounded() -> None:
    group = _single_token_group(math.log(5.0), [0, 1])
    assert token_terms(group, ClipConfig())[0][0] == pytest.approx(-5.0)


def test_objective_forms_weight_tokens_differently() -> None:
    logp = [[0.0], [0.0, 0.0, 0.0]]
    group = RolloutGroup.of(logp, logp, [1, 0], eps_norm=0.0)
    pooled = surrogate_objective(group, ClipConfig())
    cfg = ClipConfig(objective_form=ObjectiveForm.PER_TRAJECTORY_MEAN)
    per_trajectory = surrogate_objective(group, cfg)
    assert pooled == pytest.approx((1 - 3) / 4)
    assert per_trajectory == pytest.approx(0.0)


def test_kl_penalty_requires_per_trajectory_form() -> None:
    with pytest.raises(ValueError, match="per_trajectory_mean"):
        ClipConfig(beta=0.1)
    cfg = ClipConfig(beta=0.1, objective_form=ObjectiveForm.PER_TRAJECTORY_MEAN)
    with pytest.raises(ValueError, match="reference"):
        surrogate_objective(RolloutGroup.of([[0.0]], [[0.0]], [1.0]), cfg)


def test_kl_is_zero_when_policies_match() -> None:
    cfg = ClipConfig(beta=0.5, objective_form=ObjectiveForm.PER_TRAJECTORY_MEAN)
    base = RolloutGroup.of([[0.1, -0.2]], [[0.0, 0.0]], [1.0])
    same = RolloutGroup.of([[0.1, -0.2]], [[0.0, 0.0]], [1.0], logp_ref=[[0.1, -0.2]])
    plain = ClipConfig(objective_form=ObjectiveForm.PER_TRAJECTORY_MEAN)
    expected = surrogate_objective(base, plain)
    assert surrogate_objective(same, cfg) == pytest.approx(expected)


def test_group_shapes_must_agree() -> None:
    with pytest.raises(ValueError, match="same rollouts"):
        RolloutGroup.of([[0.0]], [[0.0], [0.0]], [1.0])
    with pytest.raises(ValueError, match="shapes differ"):
        RolloutGroup.of([[0.0, 0.0]], [[0.0]], [1.0])
    with pytest.raises(ValueError, match="no tokens"):
        RolloutGroup.of([[]], [[]], [1.0])


def _away_from_clip_edges(rng: np.random.Generator, size: int) -> np.ndarray:
    """Log-ratios whose ratio stays at least 0.02 away from both clip edges."""
    values = []
    edges = (1 - EPS_LOW, 1 + EPS_HIGH)
    while len(values) < size:
        log_ratio = rng.uniform(-0.6, 0.6)
        if all(abs(math.exp(log_ratio) - e) > 0.02 for e in edges):
            values.append(log_ratio)
    return np.asarray(values)


def _random_group(rng: np.random.Generator, with_ref: bool) -> RolloutGroup:
    size = int(rng.integers(2, 6))
    lengths = rng.integers(1, 7, size=size)
    old = [rng.normal(-1.0, 0.5, n) for n in lengths]
    new = [o + _away_from_clip_edges(rng, len(o)) for o in old]
    ref = [o + rng.normal(0, 0.1, len(o)) for o in old] if with_ref else None
    return RolloutGroup.of(new, old, rng.uniform(0, 1, size).tolist(), logp_ref=ref)


def _shifted(group: RolloutGroup, logp_new: list[np.ndarray]) -> RolloutGroup:
    return RolloutGroup.of(logp_new, group.logp_old, group.rewards, group.logp_ref)


@pytest.mark.parametrize(
    "cfg",
    [
        ClipConfig(),
        ClipConfig(objective_form=ObjectiveForm.PER_TRAJECTORY_MEAN),
        ClipConfig(beta=0.05, objective_form=ObjectiveForm.PER_TRAJECTORY_MEAN),
    ],
    ids=["token_pooled", "per_trajectory_mean", "kl_penalty"],
)
def test_gradient_matches_central_differences(cfg: ClipConfig) -> None:
    rng = np.random.default_rng(7)
    h = 1e-6
    for _ in range(100):
        group = _random_group(rng, with_ref=cfg.beta > 0)
        analytic = surrogate_gradient(group, cfg)
        for i, tokens in enumerate(group.logp_new):
            numeric = np.zeros_like(tokens)
            for t in range(tokens.size):
                plus = [a.copy() for a in group.logp_new]
                minus = [a.copy() for a in group.logp_new]
                plus[i][t] += h
                minus[i][t] -= h
                f_plus = surrogate_objective(_shifted(group, plus), cfg)
                f_minus = surrogate_objective(_shifted(group, minus), cfg)
                numeric[t] = (f_plus - f_minus) / (2 * h)
            np.testing.assert_allclose(analytic[i], numeric, rtol=1e-5, atol=1e-9)


# --------------------------------------------------------------------- #
# Rejection sampling and export                                         #
# --------------------------------------------------------------------- #
def test_select_best_rollout_matches_a_scan() -> None:
    rng = np.random.default_rng(3)
    for _ in range(50):
        rewards = rng.integers(0, 4, size=8).astype(float).tolist()
        best = max(range(8), key=lambda i: (rewards[i], -i))
        assert select_best_rollout(rewards) == best


def test_select_best_rollout_needs_rollouts() -> None:
    with pytest.raises(ValueError):
        select_best_rollout([])


def _candidates() -> list[SftCandidate]:
    return [
        SftCandidate("task-b", "q b", "b0", 0.1),
        SftCandidate("task-a", "q a", "a0", 0.9),
        SftCandidate("task-b", "q b", "b1", 1.0),
        SftCandidate("task-a", "q a", "a1", 1.0),
        SftCandidate("task-b", "q b", "b2", 1.0),
        SftCandidate("task-a", "q a", "a2", 0.0),
    ]


def test_export_keeps_the_best_rollout_per_task(tmp_path: Path) -> None:
    out = tmp_path / "sft.jsonl"
    assert export_sft_dataset(_candidates(), out) == 2
    header, *records = [json.loads(line) for line in out.read_text().splitlines()]
    assert header == {"format": "nexus-sft", "version": 1, "min_reward": 0.0}
    kept = [(r["task_id"], r["text"]) for r in records]
    assert kept == [("task-a", "a1"), ("task-b", "b1")]


def test_export_filters_by_min_reward_and_is_stable(tmp_path: Path) -> None:
    candidates = [*_candidates(), SftCandidate("task-c", "q c", "c0", 0.5)]
    first, second = tmp_path / "one.jsonl", tmp_path / "two.jsonl"
    assert export_sft_dataset(candidates, first, min_reward=0.9) == 2
    assert "task-c" not in first.read_text()
    export_sft_dataset(candidates, second, min_reward=0.9)
    assert first.read_bytes() == second.read_bytes()


def test_export_of_nothing_writes_the_header(tmp_path: Path) -> None:
    out = tmp_path / "empty.jsonl"
    assert export_sft_dataset([], out) == 0
    assert len(out.read_text().splitlines()) == 1
