"""Data-parallel stepping of many independent books.

A :class:`BookBatch` stores ``K`` books as stacked arrays (``(K, N, 6)`` per
side).  Parallelism is over books only; each book's messages are folded
strictly in order by the same kernel the single-book API uses, so a batch
result is bit-identical to the serial fold of every book.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit, prange

from .book import (
    EMPTY,
    MESSAGE_FIELDS,
    N_COUNTERS,
    ORDER_FIELDS,
    TRADE_COUNT,
    TRADE_FIELDS,
    BookState,
    _process_block_kernel,
)


@dataclass(eq=False)
class BookBatch:
    asks: np.ndarray
    bids: np.ndarray
    trades: np.ndarray
    counters: np.ndarray
    cursors: np.ndarray

    @classmethod
    def empty(cls, n_books: int, capacity: int, trade_capacity: Optional[int] = None) -> "BookBatch":
        t = trade_capacity or capacity
        return cls(
            asks=np.full((n_books, capacity, ORDER_FIELDS), EMPTY, dtype=np.int64),
            bids=np.full((n_books, capacity, ORDER_FIELDS), EMPTY, dtype=np.int64),
            trades=np.full((n_books, t, TRADE_FIELDS), EMPTY, dtype=np.int64),
            counters=np.zeros((n_books, N_COUNTERS), dtype=np.int64),
            cursors=np.zeros(n_books, dtype=np.int64),
        )

    @classmethod
    def from_books(cls, books: Sequence[BookState]) -> "BookBatch":
        if not books:
            raise ValueError("from_books needs at least one book; use BookBatch.empty(0, N)")
        if len({b.capacity for b in books}) != 1:
            raise ValueError("all books in a batch must share one capacity")
        return cls(
            asks=np.stack([b.asks for b in books]),
            bids=np.stack([b.bids for b in books]),
            trades=np.stack([b.trades for b in books]),
            counters=np.stack([b.counters for b in books]),
            cursors=np.zeros(len(books), dtype=np.int64),
        )

    @classmethod
    def clone(cls, book: BookState, n_books: int) -> "BookBatch":
        return cls(
            asks=np.repeat(book.asks[None], n_books, axis=0),
            bids=np.repeat(book.bids[None], n_books, axis=0),
            trades=np.repeat(book.trades[None], n_books, axis=0),
            counters=np.repeat(book.counters[None], n_books, axis=0),
            cursors=np.zeros(n_books, dtype=np.int64),
        )

    def __len__(self) -> int:
        return self.asks.shape[0]

    @property
    def capacity(self) -> int:
        return self.asks.shape[1]

    def book(self, k: int) -> BookState:
        """View of book ``k``; mutations write through to the batch."""
        return BookState(self.asks[k], self.bids[k], self.trades[k], self.counters[k])

    def books(self) -> list:
        return [self.book(k).copy() for k in range(len(self))]

    def copy(self) -> "BookBatch":
        return BookBatch(self.asks.copy(), self.bids.copy(), self.trades.copy(),
                         self.counters.copy(), self.cursors.copy())

    def identical(self, other: "BookBatch") -> bool:
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("asks", "bids", "trades", "counters", "cursors")
        )

    def clear_trades(self) -> None:
        self.trades[:] = EMPTY
        self.counters[:, TRADE_COUNT] = 0


@njit(cache=True)
def _batch_serial(asks, bids, trades, counters, msgs, lengths, l1, record_from):
    for k in range(asks.shape[0]):
        _process_block_kernel(asks[k], bids[k], trades[k], counters[k], msgs[k], lengths[k],
                              l1[k], record_from[k])


@njit(cache=True, parallel=True)
def _batch_parallel(asks, bids, trades, counters, msgs, lengths, l1, record_from):
    for k in prange(asks.shape[0]):
        _process_block_kernel(asks[k], bids[k], trades[k], counters[k], msgs[k], lengths[k],
                              l1[k], record_from[k])


def default_parallel() -> bool:
    return (os.cpu_count() or 1) > 1


def pad_streams(streams: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Stack variable-length message streams into ``(K, M, 8)`` plus lengths."""
    lengths = np.array([len(s) for s in streams], dtype=np.int64)
    width = int(lengths.max()) if len(streams) else 0
    out = np.zeros((len(streams), width, MESSAGE_FIELDS), dtype=np.int64)
    for k, s in enumerate(streams):
        if len(s):
            out[k, : len(s)] = np.asarray(s, dtype=np.int64).reshape(-1, MESSAGE_FIELDS)
    return out, lengths


def run_kernel(batch: BookBatch, msgs: np.ndarray, lengths: np.ndarray,
               l1: Optional[np.ndarray] = None, record_from: Optional[np.ndarray] = None,
               parallel: Optional[bool] = None) -> None:
    """In-place batch fold; the hot path shared by process_batch and the vectorised envs."""
    k = len(batch)
    if k == 0:
        return
    if l1 is None:
        l1 = np.zeros((k, 1, 4), dtype=np.int64)
        record_from = lengths
    fn = _batch_parallel if (default_parallel() if parallel is None else parallel) else _batch_serial
    fn(batch.asks, batch.bids, batch.trades, batch.counters, msgs, lengths, l1, record_from)
    batch.cursors += lengths


def process_batch(batch: BookBatch, messages, lengths=None, parallel: Optional[bool] = None) -> BookBatch:
    """Fold each book's message stream into a copy of ``batch``.

    ``messages`` is either a sequence of ``(M_k, 8)`` arrays or a padded
    ``(K, M, 8)`` array with ``lengths``.
    """
    if len(messages) != len(batch):
        raise ValueError(f"got {len(messages)} streams for {len(batch)} books")
    out = batch.copy()
    if len(batch) == 0:
        return out
    if lengths is None:
        msgs, lengths = pad_streams(messages)
    else:
        msgs = np.ascontiguousarray(messages, dtype=np.int64)
        lengths = np.asarray(lengths, dtype=np.int64)
    run_kernel(out, msgs, lengths, parallel=parallel)
    return out
