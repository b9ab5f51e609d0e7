"""Micro-benchmarks for the array book.

Three protocols:

* per-operation timings (add, cancel, match) for several capacities on a book
  whose sides each hold capacity / 3 random resting orders;
* match time against incoming market-order size;
* per-message cost when one message is pushed through ``K`` books at once.

Every figure is a median with its interquartile range over ``trials``
independent timings, each on a fresh copy of the same starting book.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import batch as batch_mod
from .batch import BookBatch
from .book import (
    ASK,
    BID,
    CANCEL,
    LIMIT,
    OID,
    PRICE,
    QTY,
    BookState,
    _add_kernel,
    _cancel_kernel,
    _match_kernel,
    _process_block_kernel,
    add_order,
    make_message,
    make_order,
)

MID = 10_000
CAPACITIES = (10, 100, 1000)
MARKET_SIZES = (0, 10, 500, 1000, 10_000)
BATCH_SIZES = (1, 10, 100, 1000)


@dataclass
class Timing:
    median_us: float
    q1_us: float
    q3_us: float
    trials: int

    @property
    def iqr_us(self) -> float:
        return self.q3_us - self.q1_us

    def as_row(self, prefix: str = "") -> dict:
        d = asdict(self)
        d["iqr_us"] = self.iqr_us
        return {f"{prefix}{k}": v for k, v in d.items()}


def summarize(samples_ns, scale: float = 1.0) -> Timing:
    us = np.asarray(samples_ns, dtype=np.float64) / 1e3 / scale
    q1, med, q3 = np.percentile(us, [25, 50, 75])
    return Timing(float(med), float(q1), float(q3), len(us))


def monotone_within_iqr(timings) -> bool:
    """True when no median drops below its predecessor by more than either IQR."""
    for a, b in zip(timings, timings[1:]):
        if b.median_us < a.median_us - max(a.iqr_us, b.iqr_us):
            return False
    return True


def random_book(rng: np.random.Generator, capacity: int, fill: float = 1 / 3,
                max_qty: int = 100, spread: int = 50) -> BookState:
    """Book with ``fill * capacity`` random orders per side around ``MID``."""
    bk = BookState.empty(capacity)
    n = max(1, int(capacity * fill))
    oid = 1
    for side, lo, hi in ((ASK, MID + 1, MID + spread), (BID, MID - spread, MID - 1)):
        for _ in range(n):
            price = int(rng.integers(lo, hi + 1))
            add_order(bk, side, make_order(price, int(rng.integers(1, max_qty + 1)), oid, 1,
                                           34200 + oid, 0))
            oid += 1
    return bk


def _time_trials(base: BookState, trials: int, op) -> Timing:
    work = base.copy()
    samples = np.empty(trials, dtype=np.int64)
    for i in range(trials):
        np.copyto(work.asks, base.asks)
        np.copyto(work.bids, base.bids)
        np.copyto(work.trades, base.trades)
        np.copyto(work.counters, base.counters)
        t0 = time.perf_counter_ns()
        op(work)
        samples[i] = time.perf_counter_ns() - t0
    return summarize(samples)


def time_operations(capacity: int, trials: int = 1000, seed: int = 0) -> dict:
    """Add / cancel / match timings with each side a third full."""
    rng = np.random.default_rng(seed)
    base = random_book(rng, capacity)
    live = base.asks[base.asks[:, QTY] > 0]
    target = live[rng.integers(len(live))]
    best = live[np.argmin(live[:, PRICE])]
    new_oid = 10_000_000

    def add(bk):
        _add_kernel(bk.asks, bk.counters, MID + 3, 5, new_oid, 2, 40000, 0)

    def cancel(bk):
        _cancel_kernel(bk.asks, bk.counters, target[PRICE], target[OID], target[QTY])

    def match(bk):
        _match_kernel(bk.asks, False, bk.trades, bk.counters, best[PRICE], best[QTY], new_oid, 40000, 0)

    _warm(base)
    return {name: _time_trials(base, trials, fn) for name, fn in
            (("add", add), ("cancel", cancel), ("match", match))}


def time_match_vs_quantity(quantities=MARKET_SIZES, capacity: int = 100, trials: int = 1000,
                           seed: int = 0) -> dict:
    """Market sell of each size against the bids of a book a third full."""
    rng = np.random.default_rng(seed)
    base = random_book(rng, capacity)
    _warm(base)
    out = {}
    for q in quantities:
        def match(bk, q=q):
            _match_kernel(bk.bids, True, bk.trades, bk.counters, 0, q, 10_000_000, 40000, 0)
        out[q] = _time_trials(base, trials, match)
    return out


def _probe_messages(base: BookState, rng: np.random.Generator) -> dict:
    live = base.asks[base.asks[:, QTY] > 0]
    target = live[rng.integers(len(live))]
    best_ask = int(live[:, PRICE].min())
    best_qty = int(live[live[:, PRICE] == best_ask][0, QTY])
    return {
        "limit": make_message(LIMIT, ASK, 5, MID + 40, 10_000_000, 2, 40000, 0),
        "cancel": make_message(CANCEL, ASK, int(target[QTY]), int(target[PRICE]), int(target[OID]), 0,
                               40000, 0),
        "limit_cross": make_message(LIMIT, BID, best_qty, best_ask, 10_000_001, 2, 40000, 0),
    }


def throughput_probe(n_books: int, capacity: int = 100, mix=("limit", "cancel", "limit_cross"),
                     trials: int = 1000, seed: int = 0, parallel=None) -> dict:
    """Cost of one message per book, pushed through ``n_books`` books in one call.

    Returned medians are per message per book (wall time of the call divided
    by ``n_books``).
    """
    if n_books < 1:
        raise ValueError("n_books must be >= 1")
    rng = np.random.default_rng(seed)
    base_book = random_book(rng, capacity)
    msgs_by_type = _probe_messages(base_book, rng)
    base = BookBatch.clone(base_book, n_books)
    work = base.copy()
    use_parallel = batch_mod.default_parallel() if parallel is None else parallel
    fn = batch_mod._batch_parallel if use_parallel else batch_mod._batch_serial
    lengths = np.ones(n_books, dtype=np.int64)
    l1 = np.zeros((n_books, 1, 4), dtype=np.int64)
    out = {}
    for kind in mix:
        msgs = np.repeat(msgs_by_type[kind][None, None, :], n_books, axis=0)
        fn(work.asks, work.bids, work.trades, work.counters, msgs, lengths, l1, lengths)
        samples = np.empty(trials, dtype=np.int64)
        for i in range(trials):
            np.copyto(work.asks, base.asks)
            np.copyto(work.bids, base.bids)
            np.copyto(work.trades, base.trades)
            np.copyto(work.counters, base.counters)
            t0 = time.perf_counter_ns()
            fn(work.asks, work.bids, work.trades, work.counters, msgs, lengths, l1, lengths)
            samples[i] = time.perf_counter_ns() - t0
        out[kind] = summarize(samples, scale=n_books)
    return out


def _warm(book: BookState) -> None:
    bk = book.copy()
    _add_kernel(bk.asks, bk.counters, MID, 1, -1, 0, 0, 0)
    _cancel_kernel(bk.asks, bk.counters, MID, -5, 1)
    _match_kernel(bk.bids, True, bk.trades, bk.counters, 0, 1, 0, 0, 0)
    scratch = np.zeros((1, 4), dtype=np.int64)
    _process_block_kernel(bk.asks, bk.bids, bk.trades, bk.counters,
                          np.zeros((0, 8), dtype=np.int64), 0, scratch, 0)
