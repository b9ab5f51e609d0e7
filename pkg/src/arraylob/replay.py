"""Market-replay base environment.

State is explicit and never mutated: ``step`` returns a new state.  One step
stamps the agent's messages, appends the next block of historical messages,
folds everything through the book (agent first), moves the clock to the last
historical timestamp and hands the step's trades back in ``step_trades``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .book import (
    CANCEL,
    DELETE,
    M_OID,
    M_TID,
    M_TNS,
    M_TS,
    M_TYPE,
    MESSAGE_FIELDS,
    BookState,
    _process_block_kernel,
)
from .lobster import NS, EmptyWindowError, WindowSet

AGENT_TRADER_ID = 4242


def to_ns(t) -> int:
    return int(t[0]) * NS + int(t[1])


@dataclass(eq=False, frozen=True)
class BaseEnvState:
    book: BookState
    step_trades: np.ndarray
    init_time: tuple
    current_time: tuple
    id_counter: int
    window_index: int
    step_counter: int

    @property
    def elapsed_ns(self) -> int:
        return to_ns(self.current_time) - to_ns(self.init_time)


class ReplayEnv:
    """Replay historical windows, optionally interleaving agent messages.

    Agent order ids are ``agent_oid_base + id_counter``; the base defaults to
    one above the largest historical order id so the two ranges never meet.
    """

    def __init__(self, windows: WindowSet, episode_duration_s: Optional[float] = None,
                 agent_trader_id: int = AGENT_TRADER_ID, agent_oid_base: Optional[int] = None,
                 trade_capacity: Optional[int] = None):
        self.windows = windows
        self.episode_duration_ns = int(round((episode_duration_s or windows.window_duration_s) * NS))
        self.agent_trader_id = agent_trader_id
        self.agent_oid_base = windows.max_oid + 1 if agent_oid_base is None else agent_oid_base
        if self.agent_oid_base <= windows.max_oid:
            raise ValueError("agent order ids would collide with historical ids")
        self.trade_capacity = trade_capacity or max(windows.capacity, 2 * windows.n_messages)

    def reset(self, window_index: int) -> BaseEnvState:
        if not self.windows.real_steps[window_index]:
            raise EmptyWindowError(f"window {window_index} has no messages")
        book = self.windows.initial_book(window_index)
        book = BookState(book.asks, book.bids,
                         np.full((self.trade_capacity, 6), -1, dtype=np.int64), book.counters)
        t0 = (int(self.windows.start_times[window_index, 0]), int(self.windows.start_times[window_index, 1]))
        return BaseEnvState(book, np.empty((0, 6), dtype=np.int64), t0, t0, 0, int(window_index), 0)

    # -- pieces of a step, shared with the vectorised environment ---------

    def stamp(self, state: BaseEnvState, agent_messages) -> tuple[np.ndarray, int]:
        """Give new agent orders fresh ids, the agent trader id and the current time."""
        msgs = np.array(agent_messages, dtype=np.int64).reshape(-1, MESSAGE_FIELDS)
        counter = state.id_counter
        for m in msgs:
            if m[M_TYPE] not in (CANCEL, DELETE):
                m[M_OID] = self.agent_oid_base + counter
                counter += 1
            m[M_TID] = self.agent_trader_id
            m[M_TS], m[M_TNS] = state.current_time
        return msgs, counter

    def data_messages(self, state: BaseEnvState) -> np.ndarray:
        if state.step_counter >= self.windows.real_steps[state.window_index]:
            return np.empty((0, MESSAGE_FIELDS), dtype=np.int64)
        return self.windows.step_messages(state.window_index, state.step_counter)

    def finish(self, state: BaseEnvState, book: BookState, data: np.ndarray, id_counter: int) -> BaseEnvState:
        now = (int(data[-1, M_TS]), int(data[-1, M_TNS])) if len(data) else state.current_time
        if to_ns(now) < to_ns(state.current_time):
            now = state.current_time
        trades = book.take_trades()
        return replace(state, book=book, step_trades=trades, current_time=now, id_counter=id_counter,
                       step_counter=state.step_counter + 1)

    # -- public API --------------------------------------------------------

    def step(self, state: BaseEnvState, agent_messages: Sequence = ()) -> BaseEnvState:
        agent, counter = self.stamp(state, agent_messages)
        data = self.data_messages(state)
        msgs = np.concatenate([agent, data]) if len(agent) else data
        book = state.book.copy()
        scratch = np.zeros((1, 4), dtype=np.int64)
        _process_block_kernel(book.asks, book.bids, book.trades, book.counters,
                              np.ascontiguousarray(msgs), len(msgs), scratch, len(msgs))
        return self.finish(state, book, data, counter)

    def is_terminal(self, state: BaseEnvState) -> bool:
        """Elapsed time strictly longer than the episode duration."""
        return state.elapsed_ns > self.episode_duration_ns

    def data_exhausted(self, state: BaseEnvState) -> bool:
        return state.step_counter >= self.windows.real_steps[state.window_index]

    def done(self, state: BaseEnvState) -> bool:
        return self.is_terminal(state) or self.data_exhausted(state)
