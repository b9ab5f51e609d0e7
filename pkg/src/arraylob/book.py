"""
Fixed-capacity array limit order book.

Each side of the book is an ``(N, 6)`` int64 array whose rows are orders laid
out as ``[price, quantity, order_id, trader_id, time_s, time_ns]``.  A row with
every field equal to ``-1`` is an empty slot.  Orders are never sorted; the best
standing order is found by a linear scan, which keeps every operation a fixed
amount of work over a fixed-size array.

Trades are logged into a separate ``(T, 6)`` array with rows
``[price, quantity, aggressive_oid, standing_oid, time_s, time_ns]``.

Messages are int64 rows ``[type, side, quantity, price, order_id, trader_id,
time_s, time_ns]``.

The ``_kernel`` functions are numba-compiled and mutate their array arguments
in place; :class:`BookState` and the module-level functions wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np
from numba import njit

# order columns
PRICE, QTY, OID, TID, TS, TNS = range(6)
ORDER_FIELDS = 6

# trade columns
T_PRICE, T_QTY, T_AGGR_OID, T_STAND_OID, T_TS, T_TNS = range(6)
TRADE_FIELDS = 6

# message columns
M_TYPE, M_SIDE, M_QTY, M_PRICE, M_OID, M_TID, M_TS, M_TNS = range(8)
MESSAGE_FIELDS = 8

LIMIT, CANCEL, DELETE, MARKET = 1, 2, 3, 4
BID, ASK = 1, -1

EMPTY = -1
MAX_PRICE = np.iinfo(np.int64).max
# synthetic orders seeded from a Level-2 snapshot carry ids <= this value
SYNTHETIC_OID = -9000

# counter slots
ADD_OVERFLOW, TRADES_DROPPED, UNKNOWN_CANCEL, PROTOCOL_ERROR, TRADE_COUNT = range(5)
N_COUNTERS = 5

# LOBSTER placeholders for unoccupied Level-2 levels
LOBSTER_EMPTY_ASK = 9999999999
LOBSTER_EMPTY_BID = -9999999999


class MsgType(IntEnum):
    LIMIT = LIMIT
    CANCEL = CANCEL
    DELETE = DELETE
    MARKET = MARKET


class Side(IntEnum):
    BID = BID
    ASK = ASK


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _better(is_bid, p, ts, tns, bp, bts, btns):
    if p != bp:
        if is_bid:
            return p > bp
        return p < bp
    if ts != bts:
        return ts < bts
    return tns < btns


@njit(cache=True)
def _best_index_kernel(side, is_bid):
    best = -1
    for i in range(side.shape[0]):
        if side[i, QTY] == EMPTY:
            continue
        if best < 0 or _better(
            is_bid,
            side[i, PRICE], side[i, TS], side[i, TNS],
            side[best, PRICE], side[best, TS], side[best, TNS],
        ):
            best = i
    return best


@njit(cache=True)
def _best_price_kernel(side, is_bid):
    """Best price, or -1 when the side is empty."""
    best = -1
    for i in range(side.shape[0]):
        if side[i, QTY] == EMPTY:
            continue
        p = side[i, PRICE]
        if best < 0 or (is_bid and p > best) or (not is_bid and p < best):
            best = p
    return best


@njit(cache=True)
def _volume_at_kernel(side, price):
    total = 0
    for i in range(side.shape[0]):
        if side[i, QTY] != EMPTY and side[i, PRICE] == price:
            total += side[i, QTY]
    return total


@njit(cache=True)
def _add_kernel(side, counters, price, qty, oid, tid, ts, tns):
    for i in range(side.shape[0]):
        if side[i, QTY] == EMPTY:
            side[i, PRICE] = price
            side[i, QTY] = qty
            side[i, OID] = oid
            side[i, TID] = tid
            side[i, TS] = ts
            side[i, TNS] = tns
            return i
    counters[ADD_OVERFLOW] += 1
    return -1


@njit(cache=True)
def _cancel_kernel(side, counters, price, oid, qty):
    exact = -1
    synthetic = -1
    for i in range(side.shape[0]):
        if side[i, QTY] == EMPTY:
            continue
        if side[i, OID] == oid:
            exact = i
            break
        if synthetic < 0 and side[i, OID] <= SYNTHETIC_OID and side[i, PRICE] == price:
            synthetic = i
    idx = exact if exact >= 0 else synthetic
    if idx < 0:
        counters[UNKNOWN_CANCEL] += 1
        return -1
    side[idx, QTY] -= qty
    if side[idx, QTY] <= 0:
        side[idx, :] = EMPTY
    return idx


@njit(cache=True)
def _log_trade(trades, counters, price, qty, oid_a, oid_s, ts, tns):
    n = counters[TRADE_COUNT]
    if n >= trades.shape[0]:
        counters[TRADES_DROPPED] += 1
        return
    trades[n, T_PRICE] = price
    trades[n, T_QTY] = qty
    trades[n, T_AGGR_OID] = oid_a
    trades[n, T_STAND_OID] = oid_s
    trades[n, T_TS] = ts
    trades[n, T_TNS] = tns
    counters[TRADE_COUNT] = n + 1


@njit(cache=True)
def _match_kernel(standing, standing_is_bid, trades, counters, price, qty, oid, ts, tns):
    """Walk the standing side with an aggressive order; return the unmatched remainder."""
    q_a = qty
    while q_a > 0:
        idx = _best_index_kernel(standing, standing_is_bid)
        if idx < 0:
            break
        p_s = standing[idx, PRICE]
        # a sell aggresses against bids, a buy against asks
        if standing_is_bid:
            if price > p_s:
                break
        elif price < p_s:
            break
        q_s = standing[idx, QTY]
        q_s_new = max(0, q_s - q_a)
        q_a = q_a - q_s
        _log_trade(trades, counters, p_s, q_s - q_s_new, oid, standing[idx, OID], ts, tns)
        standing[idx, QTY] = q_s_new
        if q_s_new <= 0:
            standing[idx, :] = EMPTY
    return max(0, q_a)


@njit(cache=True)
def _process_kernel(asks, bids, trades, counters, msg):
    kind = msg[M_TYPE]
    side = msg[M_SIDE]
    if side == BID:
        own = bids
        opposite = asks
        opposite_is_bid = False
    elif side == ASK:
        own = asks
        opposite = bids
        opposite_is_bid = True
    else:
        counters[PROTOCOL_ERROR] += 1
        return
    qty = msg[M_QTY]
    price = msg[M_PRICE]
    oid = msg[M_OID]
    ts = msg[M_TS]
    tns = msg[M_TNS]
    if kind == LIMIT:
        rem = _match_kernel(opposite, opposite_is_bid, trades, counters, price, qty, oid, ts, tns)
        if rem > 0:
            _add_kernel(own, counters, price, rem, oid, msg[M_TID], ts, tns)
    elif kind == CANCEL or kind == DELETE:
        _cancel_kernel(own, counters, price, oid, qty)
    elif kind == MARKET:
        effective = MAX_PRICE if side == BID else 0
        _match_kernel(opposite, opposite_is_bid, trades, counters, effective, qty, oid, ts, tns)
    else:
        counters[PROTOCOL_ERROR] += 1


@njit(cache=True)
def _record_l1(asks, bids, out, j):
    pa = _best_price_kernel(asks, False)
    pb = _best_price_kernel(bids, True)
    if pa >= 0:
        out[j, 0] = pa
        out[j, 1] = _volume_at_kernel(asks, pa)
    elif j > 0:
        out[j, 0] = out[j - 1, 0]
        out[j, 1] = out[j - 1, 1]
    if pb >= 0:
        out[j, 2] = pb
        out[j, 3] = _volume_at_kernel(bids, pb)
    elif j > 0:
        out[j, 2] = out[j - 1, 2]
        out[j, 3] = out[j - 1, 3]


@njit(cache=True)
def _process_block_kernel(asks, bids, trades, counters, msgs, n, l1, record_from):
    """Fold ``msgs[:n]`` into the book.

    After every message with index >= ``record_from`` the Level-1 quote
    ``(ask_p, ask_q, bid_p, bid_q)`` is written to ``l1[i - record_from + 1]``;
    ``l1[0]`` must hold the quote to carry forward when a side is empty.
    Pass a ``(1, 4)`` array and ``record_from = n`` to skip recording.
    """
    for i in range(n):
        _process_kernel(asks, bids, trades, counters, msgs[i])
        if i >= record_from:
            _record_l1(asks, bids, l1, i - record_from + 1)


# ---------------------------------------------------------------------------
# Python surface
# ---------------------------------------------------------------------------


def empty_side(capacity: int) -> np.ndarray:
    return np.full((capacity, ORDER_FIELDS), EMPTY, dtype=np.int64)


def make_order(price, quantity, order_id, trader_id=0, time_s=0, time_ns=0) -> np.ndarray:
    return np.array([price, quantity, order_id, trader_id, time_s, time_ns], dtype=np.int64)


def make_message(msg_type, side, quantity, price=0, order_id=0, trader_id=0,
                 time_s=0, time_ns=0) -> np.ndarray:
    return np.array(
        [msg_type, side, quantity, price, order_id, trader_id, time_s, time_ns],
        dtype=np.int64,
    )


def is_padding(msgs: np.ndarray) -> np.ndarray:
    """Boolean mask of all-zero padding rows."""
    return ~np.any(np.asarray(msgs), axis=-1)


@dataclass(eq=False)
class BookState:
    """Both sides of one book, its trade log and its error counters."""

    asks: np.ndarray
    bids: np.ndarray
    trades: np.ndarray
    counters: np.ndarray

    @classmethod
    def empty(cls, capacity: int, trade_capacity: Optional[int] = None) -> "BookState":
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        return cls(
            asks=empty_side(capacity),
            bids=empty_side(capacity),
            trades=np.full((trade_capacity or capacity, TRADE_FIELDS), EMPTY, dtype=np.int64),
            counters=np.zeros(N_COUNTERS, dtype=np.int64),
        )

    @property
    def capacity(self) -> int:
        return self.asks.shape[0]

    def copy(self) -> "BookState":
        return BookState(self.asks.copy(), self.bids.copy(), self.trades.copy(), self.counters.copy())

    def identical(self, other: "BookState") -> bool:
        """Bit-for-bit equality of every array."""
        return (
            np.array_equal(self.asks, other.asks)
            and np.array_equal(self.bids, other.bids)
            and np.array_equal(self.trades, other.trades)
            and np.array_equal(self.counters, other.counters)
        )

    def side(self, side: int) -> np.ndarray:
        if side == BID:
            return self.bids
        if side == ASK:
            return self.asks
        raise ValueError(f"unknown side {side}")

    def process(self, msg) -> "BookState":
        _process_kernel(self.asks, self.bids, self.trades, self.counters,
                        np.asarray(msg, dtype=np.int64))
        return self

    def process_many(self, msgs) -> "BookState":
        msgs = np.ascontiguousarray(msgs, dtype=np.int64).reshape(-1, MESSAGE_FIELDS)
        scratch = np.zeros((1, 4), dtype=np.int64)
        _process_block_kernel(self.asks, self.bids, self.trades, self.counters,
                              msgs, msgs.shape[0], scratch, msgs.shape[0])
        return self

    @property
    def best_ask(self) -> Optional[int]:
        return best_price(self.asks, ASK)

    @property
    def best_bid(self) -> Optional[int]:
        return best_price(self.bids, BID)

    def resting(self, side: int) -> np.ndarray:
        s = self.side(side)
        return s[s[:, QTY] != EMPTY].copy()

    @property
    def trade_count(self) -> int:
        return int(self.counters[TRADE_COUNT])

    def trade_tape(self) -> np.ndarray:
        return self.trades[: self.trade_count].copy()

    def clear_trades(self) -> None:
        self.trades[: self.trade_count] = EMPTY
        self.counters[TRADE_COUNT] = 0

    def take_trades(self) -> np.ndarray:
        tape = self.trade_tape()
        self.clear_trades()
        return tape

    @property
    def add_overflow_count(self) -> int:
        return int(self.counters[ADD_OVERFLOW])

    @property
    def dropped_trades(self) -> int:
        return int(self.counters[TRADES_DROPPED])

    @property
    def unknown_cancels(self) -> int:
        return int(self.counters[UNKNOWN_CANCEL])

    @property
    def protocol_errors(self) -> int:
        return int(self.counters[PROTOCOL_ERROR])


def add_order(book: BookState, side: int, order) -> bool:
    """Insert ``order`` into the lowest empty slot; False (and counted) when full."""
    o = np.asarray(order, dtype=np.int64)
    slot = _add_kernel(book.side(side), book.counters, o[PRICE], o[QTY], o[OID], o[TID], o[TS], o[TNS])
    return slot >= 0


def cancel_order(book: BookState, side: int, price: int, order_id: int, quantity: int) -> bool:
    """Reduce an order by ``quantity``, deleting it at zero.

    An exact order-id match takes precedence; failing that, a synthetic
    snapshot order resting at ``price`` is reduced instead.  Unknown orders
    leave the book untouched and bump the ``unknown_cancels`` counter.
    """
    return _cancel_kernel(book.side(side), book.counters, price, order_id, quantity) >= 0


def best_price(side_orders: np.ndarray, side: int) -> Optional[int]:
    p = _best_price_kernel(side_orders, side == BID)
    return None if p < 0 else int(p)


def best_standing_order(side_orders: np.ndarray, side: int) -> Optional[int]:
    idx = _best_index_kernel(side_orders, side == BID)
    return None if idx < 0 else int(idx)


def match_against(book: BookState, aggressive, opposite_side: int) -> int:
    """Match an aggressive order against ``opposite_side``; return the remainder."""
    o = np.asarray(aggressive, dtype=np.int64)
    return int(_match_kernel(book.side(opposite_side), opposite_side == BID, book.trades, book.counters,
                             o[PRICE], o[QTY], o[OID], o[TS], o[TNS]))


def process_message(book: BookState, msg) -> BookState:
    return book.process(msg)


def _side_levels(orders: np.ndarray, descending: bool, levels: int) -> np.ndarray:
    live = orders[orders[:, QTY] != EMPTY]
    prices, inverse = np.unique(live[:, PRICE], return_inverse=True)
    volumes = np.bincount(inverse, weights=live[:, QTY], minlength=len(prices)).astype(np.int64)
    if descending:
        prices, volumes = prices[::-1], volumes[::-1]
    out = np.column_stack([prices, volumes])[:levels]
    return out


def l2_snapshot(book: BookState, levels: int = 10) -> np.ndarray:
    """Aggregated ``(levels, 4)`` view in LOBSTER column order.

    Columns are ``ask_price, ask_volume, bid_price, bid_volume``; missing levels
    use the LOBSTER placeholders (``9999999999`` / ``-9999999999`` with zero size).
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    out = np.zeros((levels, 4), dtype=np.int64)
    out[:, 0] = LOBSTER_EMPTY_ASK
    out[:, 2] = LOBSTER_EMPTY_BID
    a = _side_levels(book.asks, False, levels)
    b = _side_levels(book.bids, True, levels)
    out[: len(a), 0:2] = a
    out[: len(b), 2:4] = b
    return out
