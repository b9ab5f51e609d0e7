"""Optimal-execution environment on top of market replay.

The agent has to buy or sell ``task_size`` shares within the episode.  Each
step it chooses four sizes for four reference prices (far touch, mid, near
touch, passive).  Its resting orders are cancelled and replaced every step.
Once the clock is within ``force_lead_s`` of the episode end (or the window
runs out of data) the limit batch is replaced by a market order for whatever
is left.

Mid prices are kept exact: the state stores ``ask + bid`` (twice the mid)
and only the observation divides by two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .batch import BookBatch, pad_streams, run_kernel
from .book import (
    ASK,
    BID,
    DELETE,
    LIMIT,
    MARKET,
    OID,
    PRICE,
    QTY,
    T_AGGR_OID,
    T_PRICE,
    T_QTY,
    T_STAND_OID,
    TID,
    _process_block_kernel,
    best_price,
    make_message,
)
from .lobster import NS, WindowSet
from .replay import AGENT_TRADER_ID, BaseEnvState, ReplayEnv, to_ns

FAR_TOUCH, MID, NEAR_TOUCH, PASSIVE = range(4)


class DegenerateBookError(ValueError):
    """The opening book lacks a side, so the initial mid is undefined."""


def parse_side(side) -> int:
    if isinstance(side, str):
        s = side.lower()
        if s in ("buy", "bid", "b"):
            return BID
        if s in ("sell", "ask", "s"):
            return ASK
        raise ValueError(f"unknown task side {side!r}")
    if side in (BID, ASK):
        return int(side)
    raise ValueError(f"unknown task side {side!r}")


@dataclass(frozen=True)
class ExecParams:
    task_side: int = ASK
    task_size: int = 500
    lam: float = 0.0
    depth_n: int = 2
    tick_size: int = 1
    episode_duration_s: float = 1800.0
    force_lead_s: float = 60.0
    agent_trader_id: int = AGENT_TRADER_ID

    def __post_init__(self):
        object.__setattr__(self, "task_side", parse_side(self.task_side))
        if self.task_size < 1:
            raise ValueError("task_size must be >= 1")
        if self.depth_n < 0 or self.tick_size < 1 or self.episode_duration_s <= 0:
            raise ValueError("depth_n >= 0, tick_size >= 1 and episode_duration_s > 0 required")


@dataclass(eq=False, frozen=True)
class ExecEnvState:
    base: BaseEnvState
    l1_history: np.ndarray  # (n_messages, 4): ask_p, ask_q, bid_p, bid_q
    p_init2: int
    task_side: int
    task_size: int
    quantity_executed: int = 0
    revenue: int = 0
    ladder: tuple = ()
    forced: bool = False
    done: bool = False
    agent_trades: np.ndarray = field(default_factory=lambda: np.empty((0, 6), dtype=np.int64))

    @property
    def p_init(self) -> float:
        return self.p_init2 / 2

    @property
    def remaining(self) -> int:
        return self.task_size - self.quantity_executed


def compute_reward(step_trades: np.ndarray, agent_trades: np.ndarray, p_init: float, task_side: int,
                   lam: float) -> float:
    """VWAP advantage plus ``lam`` times drift, over one step.

    The VWAP is taken over every trade of the step; the sums run over the
    agent's trades only.  Written for a sell; a buy flips the sign of both
    terms so that positive always means favourable.
    """
    step_trades = np.asarray(step_trades).reshape(-1, 6)
    agent_trades = np.asarray(agent_trades).reshape(-1, 6)
    if len(step_trades) == 0 or len(agent_trades) == 0:
        return 0.0
    q_all = step_trades[:, T_QTY].astype(np.float64)
    vwap = float(np.dot(q_all, step_trades[:, T_PRICE].astype(np.float64)) / q_all.sum())
    q = agent_trades[:, T_QTY].astype(np.float64)
    p = agent_trades[:, T_PRICE].astype(np.float64)
    advantage = float(np.dot(q, p - vwap))
    drift = float(q.sum() * (vwap - p_init))
    r = advantage + lam * drift
    return r if task_side == ASK else -r


def _l1(book) -> Optional[tuple]:
    pa = best_price(book.asks, ASK)
    pb = best_price(book.bids, BID)
    if pa is None or pb is None:
        return None
    qa = int(book.asks[book.asks[:, PRICE] == pa][:, QTY].sum())
    qb = int(book.bids[book.bids[:, PRICE] == pb][:, QTY].sum())
    return pa, qa, pb, qb


class ExecEnv:
    def __init__(self, windows: WindowSet, params: ExecParams, trade_capacity: Optional[int] = None):
        self.params = params
        self.replay = ReplayEnv(windows, params.episode_duration_s, params.agent_trader_id,
                                trade_capacity=trade_capacity)
        self.windows = windows
        self.n_messages = windows.n_messages

    @property
    def obs_size(self) -> int:
        return self.n_messages * 6 + 2 * 2 + 4

    # -- reset ---------------------------------------------------------------

    def reset(self, window_index: int):
        base = self.replay.reset(window_index)
        l1 = _l1(base.book)
        if l1 is None:
            raise DegenerateBookError(f"window {window_index}: initial book has an empty side")
        hist = np.tile(np.array(l1, dtype=np.int64), (self.n_messages, 1))
        state = ExecEnvState(base, hist, l1[0] + l1[2], self.params.task_side, self.params.task_size)
        state = replace(state, ladder=self._ladder_from(l1[0], l1[2]))
        return state, self.build_observation(state)

    # -- prices ----------------------------------------------------------------

    def _ladder_from(self, ask: int, bid: int) -> tuple:
        n_ticks = self.params.depth_n * self.params.tick_size
        mid = (ask + bid) / 2
        if self.params.task_side == ASK:
            return (bid, mid, ask, ask + n_ticks)
        return (ask, mid, bid, bid - n_ticks)

    def price_ladder(self, state: ExecEnvState) -> tuple:
        """``(far_touch, mid, near_touch, passive)`` from the current book.

        Falls back to the last valid ladder while a side is empty.
        """
        l1 = _l1(state.base.book)
        if l1 is None:
            return state.ladder
        return self._ladder_from(l1[0], l1[2])

    def order_prices(self, ladder: tuple) -> list:
        """Integer limit prices; an odd mid rounds away from the far touch."""
        mid = math.ceil(ladder[MID]) if self.params.task_side == ASK else math.floor(ladder[MID])
        return [int(ladder[FAR_TOUCH]), int(mid), int(ladder[NEAR_TOUCH]), int(ladder[PASSIVE])]

    # -- actions -----------------------------------------------------------------

    def _cancel_all(self, state: ExecEnvState) -> list:
        side = state.base.book.side(self.params.task_side)
        mine = side[(side[:, QTY] > 0) & (side[:, TID] == self.params.agent_trader_id)]
        return [make_message(DELETE, self.params.task_side, int(o[QTY]), int(o[PRICE]), int(o[OID]))
                for o in mine]

    def action_to_messages(self, state: ExecEnvState, action) -> np.ndarray:
        a = np.asarray(action, dtype=np.float64).reshape(4)
        msgs = self._cancel_all(state)
        sizes = np.maximum(0, np.rint(np.nan_to_num(a, nan=0.0, posinf=0.0, neginf=0.0))).astype(np.int64)
        budget = state.remaining
        capped = []
        for q in sizes:
            take = int(min(q, budget))
            capped.append(take)
            budget -= take
        prices = self.order_prices(self.price_ladder(state))
        for q, p in zip(capped, prices):
            if q > 0:
                msgs.append(make_message(LIMIT, self.params.task_side, q, p))
        return np.array(msgs, dtype=np.int64).reshape(-1, 8)

    def force_due(self, state: ExecEnvState) -> bool:
        base = state.base
        end = to_ns(base.init_time) + self.replay.episode_duration_ns
        lead = int(round(self.params.force_lead_s * NS))
        last_step = base.step_counter >= self.windows.real_steps[base.window_index] - 1
        return state.remaining > 0 and (to_ns(base.current_time) >= end - lead or last_step)

    def agent_messages(self, state: ExecEnvState, action) -> tuple[np.ndarray, bool]:
        if self.force_due(state):
            msgs = self._cancel_all(state)
            msgs.append(make_message(MARKET, self.params.task_side, state.remaining))
            return np.array(msgs, dtype=np.int64), True
        return self.action_to_messages(state, action), False

    # -- stepping ------------------------------------------------------------------

    def prepare(self, state: ExecEnvState, action):
        """Messages and L1 scratch for one step; the book is not touched."""
        agent, forced = self.agent_messages(state, action)
        agent, counter = self.replay.stamp(state.base, agent)
        data = self.replay.data_messages(state.base)
        msgs = np.concatenate([agent, data])
        l1 = np.zeros((len(data) + 1, 4), dtype=np.int64)
        l1[0] = state.l1_history[-1]
        return msgs, len(agent), data, counter, forced, l1

    def finish(self, state: ExecEnvState, book, data, counter, forced, l1):
        base = self.replay.finish(state.base, book, data, counter)
        trades = base.step_trades
        lo = self.replay.agent_oid_base
        mine = (trades[:, T_AGGR_OID] >= lo) | (trades[:, T_STAND_OID] >= lo)
        agent_trades = trades[mine]
        filled = int(agent_trades[:, T_QTY].sum())
        revenue = int(np.dot(agent_trades[:, T_QTY], agent_trades[:, T_PRICE]))
        hist = l1[1:]
        if len(hist) < self.n_messages:
            pad = np.repeat(l1[-1:], self.n_messages - len(hist), axis=0)
            hist = np.concatenate([hist, pad])
        reward = compute_reward(trades, agent_trades, state.p_init, state.task_side, self.params.lam)
        executed = state.quantity_executed + filled
        new = replace(state, base=base, l1_history=hist, quantity_executed=executed,
                      revenue=state.revenue + revenue, forced=state.forced or forced,
                      agent_trades=agent_trades)
        new = replace(new, ladder=self.price_ladder(new))
        done = executed >= state.task_size or self.replay.done(base)
        new = replace(new, done=done)
        info = {
            "forced": forced,
            "filled": filled,
            "shortfall": new.remaining if done else 0,
            "step_trades": len(trades),
            "dropped_trades": book.dropped_trades,
        }
        return new, self.build_observation(new), reward, done, info

    def step(self, state: ExecEnvState, action):
        if state.done:
            raise RuntimeError("step() called on a finished episode; reset first")
        msgs, n_agent, data, counter, forced, l1 = self.prepare(state, action)
        book = state.base.book.copy()
        _process_block_kernel(book.asks, book.bids, book.trades, book.counters,
                              np.ascontiguousarray(msgs), len(msgs), l1, n_agent)
        return self.finish(state, book, data, counter, forced, l1)

    # -- observation ------------------------------------------------------------------

    def build_observation(self, state: ExecEnvState) -> np.ndarray:
        h = state.l1_history.astype(np.float64)
        ask_p, ask_q, bid_p, bid_q = h.T
        mids = (ask_p + bid_p) / 2
        n_ticks = self.params.depth_n * self.params.tick_size
        passive = ask_p + n_ticks if state.task_side == ASK else bid_p - n_ticks
        base = state.base
        elapsed = divmod(base.elapsed_ns, NS)
        tail = [
            base.current_time[0], base.current_time[1],
            elapsed[0], elapsed[1],
            state.p_init,
            mids[-1] - state.p_init,
            state.task_size,
            state.quantity_executed,
        ]
        return np.concatenate([bid_p, ask_p, mids, passive, ask_p - bid_p, ask_q - bid_q,
                               np.array(tail, dtype=np.float64)])


OBS_FIELDS = ("best_bid", "best_ask", "mid", "passive", "spread", "imbalance")


def observation_slices(n_messages: int) -> dict:
    """Name -> slice into the flat observation."""
    out = {name: slice(i * n_messages, (i + 1) * n_messages) for i, name in enumerate(OBS_FIELDS)}
    k = 6 * n_messages
    for name, width in (("current_time", 2), ("elapsed_time", 2), ("p_init", 1), ("drift", 1),
                        ("task_size", 1), ("quantity_executed", 1)):
        out[name] = slice(k, k + width)
        k += width
    return out


class VecExecEnv:
    """Steps several execution episodes through one batched kernel call."""

    def __init__(self, env: ExecEnv, parallel: Optional[bool] = None):
        self.env = env
        self.parallel = parallel

    def reset(self, window_indices: Sequence[int]):
        pairs = [self.env.reset(w) for w in window_indices]
        return [p[0] for p in pairs], [p[1] for p in pairs]

    def step(self, states: Sequence[ExecEnvState], actions):
        """Advance every live episode; finished ones are returned unchanged with reward 0."""
        live = [k for k, s in enumerate(states) if not s.done]
        results = [(s, self.env.build_observation(s), 0.0, True, {}) for s in states]
        if not live:
            return results
        prepared = [self.env.prepare(states[k], actions[k]) for k in live]
        msgs, lengths = pad_streams([p[0] for p in prepared])
        width = max(len(p[5]) for p in prepared)
        l1 = np.zeros((len(live), width, 4), dtype=np.int64)
        for i, p in enumerate(prepared):
            l1[i, : len(p[5])] = p[5]
        record_from = np.array([p[1] for p in prepared], dtype=np.int64)
        batch = BookBatch.from_books([states[k].base.book for k in live])
        run_kernel(batch, msgs, lengths, l1, record_from, parallel=self.parallel)
        for i, k in enumerate(live):
            _, _, data, counter, forced, l1_k = prepared[i]
            l1_k = l1[i, : len(l1_k)].copy()
            results[k] = self.env.finish(states[k], batch.book(i).copy(), data, counter, forced, l1_k)
        return results
