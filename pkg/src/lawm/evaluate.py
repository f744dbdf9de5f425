"""Rollout harness and success-rate evaluation.

Every actor (scripted expert, NLL policy, diffusion policy) runs through the
same receding-horizon loop: predict a chunk, execute the first n_exec
actions, re-plan. The expert gets privileged state; policies only see the
rendered frame, proprioception, and the instruction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import autodiff as ad
from .envsim import TaskSpec, WorldState, reset, step
from .expert import scripted_expert
from .policy import Policy, StageError
from .render import render
from .seeding import rng_from
from .training import sample_diffusion_actions


class Actor(Protocol):
    def plan(self, state: WorldState, frame: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Return an (n, 7) chunk of actions to execute."""


class ExpertActor:
    """Privileged scripted controller; plans one step at a time."""

    def plan(self, state, frame, rng):
        return scripted_expert(state).action[None]


class NLLPolicyActor:
    def __init__(self, policy: Policy):
        if policy.stage != "finetune_nll":
            raise StageError(f"NLL actor needs a finetune_nll policy, got {policy.stage!r}")
        self.policy = policy

    def plan(self, state, frame, rng):
        with ad.no_grad():
            pred = self.policy.forward_action(frame[None], state.proprio[None], [state.task.instruction])
        return pred.mean.data[0].astype(np.float64)


class DiffusionPolicyActor:
    def __init__(self, policy: Policy, diffusion_k: int = 50):
        if policy.stage != "finetune_diffusion":
            raise StageError(f"diffusion actor needs a finetune_diffusion policy, got {policy.stage!r}")
        self.policy = policy
        self.diffusion_k = diffusion_k

    def plan(self, state, frame, rng):
        return sample_diffusion_actions(
            self.policy, frame, state.proprio[None], state.task.instruction, rng, self.diffusion_k
        )


def actor_for_policy(policy: Policy, diffusion_k: int = 50) -> Actor:
    if policy.stage == "finetune_nll":
        return NLLPolicyActor(policy)
    if policy.stage == "finetune_diffusion":
        return DiffusionPolicyActor(policy, diffusion_k)
    raise StageError(f"a {policy.stage!r}-stage checkpoint cannot act; finetune it first")


def run_trial(actor: Actor, task: TaskSpec, seed: int, image_hw: int = 64,
              max_steps: int = 100, n_exec: int = 1, distractors: int = 2) -> tuple[bool, int]:
    """One receding-horizon rollout; returns (success, steps_taken)."""
    rng = rng_from(seed, 9001)
    state = reset(seed, task, distractors=distractors, max_steps=max_steps)
    done = False
    success = False
    steps_taken = 0
    while not done:
        frame = render(state, image_hw)
        chunk = np.atleast_2d(actor.plan(state, frame, rng))
        for a in chunk[: max(1, n_exec)]:
            state, done, success = step(state, a)
            steps_taken += 1
            if done:
                break
    return success, steps_taken


@dataclass
class TaskResult:
    task: str
    trials: int
    successes: int

    @property
    def success_rate(self) -> float:
        return 100.0 * self.successes / self.trials


@dataclass
class SuccessReport:
    results: list[TaskResult] = field(default_factory=list)

    @property
    def mean_success_rate(self) -> float:
        if not self.results:
            return 0.0
        return float(np.mean([r.success_rate for r in self.results]))

    def as_rows(self) -> list[dict]:
        return [
            {"task": r.task, "trials": r.trials, "successes": r.successes, "success_rate": r.success_rate}
            for r in self.results
        ]

    def table(self) -> str:
        lines = ["| task | trials | successes | SR (%) |", "| --- | --- | --- | --- |"]
        for r in self.results:
            lines.append(f"| {r.task} | {r.trials} | {r.successes} | {r.success_rate:.1f} |")
        lines.append(f"| **mean** | | | {self.mean_success_rate:.1f} |")
        return "\n".join(lines)


def evaluate_success_rate(actor: Actor, tasks: list[TaskSpec], trials: int = 10, seed: int = 0,
                          image_hw: int = 64, max_steps: int = 100, n_exec: int = 1,
                          distractors: int = 2) -> SuccessReport:
    """Per-task success rate over `trials` seeded rollouts each."""
    report = SuccessReport()
    for ti, task in enumerate(tasks):
        successes = 0
        for trial in range(trials):
            trial_seed = int(np.random.SeedSequence([seed, 77, ti, trial]).generate_state(1)[0] % (2**31))
            ok, _ = run_trial(actor, task, trial_seed, image_hw, max_steps, n_exec, distractors)
            successes += int(ok)
        report.results.append(TaskResult(task.name, trials, successes))
    return report
