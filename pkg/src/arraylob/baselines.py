"""Scripted execution policies and an evaluation loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .book import M_TNS, M_TS
from .execution import NEAR_TOUCH, PASSIVE, ExecEnv, ExecEnvState, VecExecEnv
from .lobster import NS

POLICY_KINDS = ("twap", "random", "passive", "zero")


@dataclass(frozen=True)
class PolicySpec:
    kind: str = "twap"
    seed: int = 0
    planned_steps: Optional[int] = None  # None: steps that start before the forced order can fire
    max_order_size: float = 100.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}; pick one of {POLICY_KINDS}")


def linear_target(task_size: int, planned_steps: int, step: int) -> int:
    """Cumulative quantity due after ``step`` (0-based) under a linear schedule."""
    k = min(step + 1, planned_steps)
    return -(-task_size * k // planned_steps)


def _scheduled(state: ExecEnvState, planned_steps: int) -> int:
    due = linear_target(state.task_size, planned_steps, state.base.step_counter)
    return max(0, min(due - state.quantity_executed, state.remaining))


def twap_action(state: ExecEnvState, planned_steps: int) -> np.ndarray:
    """Linear schedule, all of it at the near touch."""
    a = np.zeros(4)
    a[NEAR_TOUCH] = _scheduled(state, planned_steps)
    return a


def passive_action(state: ExecEnvState, planned_steps: int) -> np.ndarray:
    a = np.zeros(4)
    a[PASSIVE] = _scheduled(state, planned_steps)
    return a


def zero_action(state: ExecEnvState = None) -> np.ndarray:
    return np.zeros(4)


def random_action(rng: np.random.Generator, max_order_size: float = 100.0) -> np.ndarray:
    return rng.uniform(0.0, max_order_size, size=4)


def default_planned_steps(env: ExecEnv, window_index: int) -> int:
    """Steps of a window that begin before either forced-order rule applies.

    A step begins at the last timestamp of the previous step (the window start
    for step 0).  The last data step and any step beginning within
    ``force_lead_s`` of the episode end carry the forced order instead.
    """
    ws = env.windows
    n = int(ws.real_steps[window_index])
    start = int(ws.start_times[window_index, 0]) * NS + int(ws.start_times[window_index, 1])
    cutoff = start + env.replay.episode_duration_ns - int(round(env.params.force_lead_s * NS))
    begins = [start]
    for k in range(n - 1):
        last = ws.step_messages(window_index, k)[-1]
        begins.append(max(begins[-1], int(last[M_TS]) * NS + int(last[M_TNS])))
    return max(1, sum(1 for b in begins[: n - 1] if b < cutoff))


class Policy:
    """Stateful wrapper so every policy has the same ``act(state)`` call."""

    def __init__(self, spec: PolicySpec, planned_steps: int, episode_seed: int = 0):
        self.spec = spec
        self.planned_steps = max(1, planned_steps)
        self.rng = np.random.default_rng([spec.seed, episode_seed])

    def act(self, state: ExecEnvState) -> np.ndarray:
        kind = self.spec.kind
        if kind == "twap":
            return twap_action(state, self.planned_steps)
        if kind == "passive":
            return passive_action(state, self.planned_steps)
        if kind == "random":
            return random_action(self.rng, self.spec.max_order_size)
        return zero_action(state)


@dataclass
class EpisodeReport:
    episode: int
    window_index: int
    policy: str
    task_side: str
    task_size: int
    quantity_executed: int
    shortfall: int
    mean_fill_price: float
    market_vwap: float
    vwap_slippage: float
    reward_sum: float
    steps: int
    completion_step: int  # -1 when the task was not completed
    forced: bool
    forced_step: int  # first step carrying the forced market order, -1 if none

    def as_dict(self) -> dict:
        return asdict(self)


class _Tracker:
    def __init__(self, episode, window_index, policy):
        self.episode = episode
        self.window_index = window_index
        self.policy = policy
        self.reward = 0.0
        self.steps = 0
        self.vol = 0
        self.notional = 0
        self.completion = -1
        self.forced_step = -1

    def update(self, state, reward, info):
        trades = state.base.step_trades
        self.reward += reward
        self.vol += int(trades[:, 1].sum())
        self.notional += int(np.dot(trades[:, 1], trades[:, 0]))
        if info.get("forced") and self.forced_step < 0:
            self.forced_step = self.steps
        if state.remaining == 0 and self.completion < 0:
            self.completion = self.steps
        self.steps += 1

    def report(self, state: ExecEnvState, spec: PolicySpec) -> EpisodeReport:
        q = state.quantity_executed
        fill = state.revenue / q if q else float("nan")
        vwap = self.notional / self.vol if self.vol else float("nan")
        return EpisodeReport(
            episode=self.episode, window_index=self.window_index, policy=spec.kind,
            task_side="sell" if state.task_side == -1 else "buy", task_size=state.task_size,
            quantity_executed=q, shortfall=state.remaining, mean_fill_price=fill, market_vwap=vwap,
            vwap_slippage=fill - vwap, reward_sum=self.reward, steps=self.steps,
            completion_step=self.completion, forced=state.forced, forced_step=self.forced_step,
        )


def evaluate(spec: PolicySpec, env: ExecEnv, window_indices: Sequence[int], n_envs: int = 1,
             parallel: Optional[bool] = None) -> list:
    """Run one episode per entry of ``window_indices``, ``n_envs`` at a time.

    Episode ``e`` seeds its policy with ``(spec.seed, e)`` so results do not
    depend on how episodes are grouped into batches.
    """
    if not len(window_indices):
        raise ValueError("need at least one window")
    vec = VecExecEnv(env, parallel=parallel)
    reports = []
    for lo in range(0, len(window_indices), n_envs):
        chunk = list(window_indices[lo: lo + n_envs])
        states, _ = vec.reset(chunk)
        policies = [Policy(spec, spec.planned_steps or default_planned_steps(env, w), lo + i)
                    for i, w in enumerate(chunk)]
        trackers = [_Tracker(lo + i, w, spec.kind) for i, w in enumerate(chunk)]
        while not all(s.done for s in states):
            actions = [p.act(s) if not s.done else None for p, s in zip(policies, states)]
            results = vec.step(states, actions)
            for i, (s_new, _, reward, _, info) in enumerate(results):
                if not states[i].done:
                    trackers[i].update(s_new, reward, info)
            states = [r[0] for r in results]
        reports.extend(t.report(s, spec) for t, s in zip(trackers, states))
    return reports


def summarize(reports: Sequence[EpisodeReport]) -> dict:
    def mean(xs):
        xs = [x for x in xs if not (isinstance(x, float) and math.isnan(x))]
        return float(np.mean(xs)) if xs else float("nan")

    return {
        "episodes": len(reports),
        "mean_reward": mean([r.reward_sum for r in reports]),
        "mean_fill_price": mean([r.mean_fill_price for r in reports]),
        "mean_vwap_slippage": mean([r.vwap_slippage for r in reports]),
        "completion_rate": float(np.mean([r.shortfall == 0 for r in reports])),
        "forced_rate": float(np.mean([r.forced for r in reports])),
    }
