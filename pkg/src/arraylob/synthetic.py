"""Synthetic LOBSTER-format trading days.

The generator keeps its own dictionary book, emits add / partial cancel /
delete / visible execution / hidden execution rows in LOBSTER column order and
writes the matching Level-2 orderbook row after every message.  Part of the
opening book is never announced by a message, like real pre-session orders.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .book import LOBSTER_EMPTY_ASK, LOBSTER_EMPTY_BID

BUY, SELL = 1, -1


def _fmt_time(t_ns: int) -> str:
    s, ns = divmod(t_ns, 1_000_000_000)
    return f"{s}.{ns:09d}"


class _DictBook:
    def __init__(self):
        self.orders = {}  # oid -> [price, qty, direction, seq]
        self.seq = 0

    def add(self, oid, price, qty, direction):
        self.seq += 1
        self.orders[oid] = [price, qty, direction, self.seq]

    def side(self, direction):
        return [(oid, o) for oid, o in self.orders.items() if o[2] == direction]

    def best(self, direction):
        live = self.side(direction)
        if not live:
            return None
        if direction == SELL:
            return min(live, key=lambda x: (x[1][0], x[1][3]))
        return min(live, key=lambda x: (-x[1][0], x[1][3]))

    def reduce(self, oid, qty):
        o = self.orders[oid]
        o[1] -= qty
        if o[1] <= 0:
            del self.orders[oid]

    def levels(self, n):
        row = []
        asks, bids = {}, {}
        for p, q, d, _ in self.orders.values():
            book = asks if d == SELL else bids
            book[p] = book.get(p, 0) + q
        a = sorted(asks.items())[:n]
        b = sorted(bids.items(), reverse=True)[:n]
        for i in range(n):
            ap, av = a[i] if i < len(a) else (LOBSTER_EMPTY_ASK, 0)
            bp, bv = b[i] if i < len(b) else (LOBSTER_EMPTY_BID, 0)
            row += [ap, av, bp, bv]
        return row


def synthetic_day(seed: int = 0, n_messages: int = 2000, levels: int = 10, start_s: int = 34200,
                  mean_gap_ms: float = 500.0, mid: int = 2_000_000, tick: int = 100,
                  pre_session_orders: int = 12, p_add: float = 0.5, p_cancel: float = 0.3,
                  p_visible: float = 0.15, p_cross: float = 0.05):
    """Return ``(message_rows, orderbook_rows)`` as lists of CSV field lists.

    Each event is an add, a cancel/delete, a visible execution, a marketable
    limit order or a hidden execution with probabilities ``p_add``,
    ``p_cancel``, ``p_visible``, ``p_cross`` and whatever is left.  A
    marketable order never exceeds the first order at the opposite touch, so
    it fills completely against that one order.
    """
    rng = np.random.default_rng(seed)
    bk = _DictBook()
    hidden_oid = 1
    for i in range(pre_session_orders):
        d = SELL if i % 2 == 0 else BUY
        price = mid - d * tick * (1 + (i // 2))
        bk.add(hidden_oid, price, int(rng.integers(50, 500)), d)
        hidden_oid += 1
    next_oid = 1_000_000
    t_ns = start_s * 1_000_000_000
    messages, books = [], []
    while len(messages) < n_messages:
        t_ns += max(1, int(rng.exponential(mean_gap_ms * 1e6)))
        d = BUY if rng.random() < 0.5 else SELL
        u = rng.random()
        ba, bb = bk.best(SELL), bk.best(BUY)
        if u < p_add or ba is None or bb is None:
            ref = (ba[1][0] if ba else mid + tick) if d == SELL else (bb[1][0] if bb else mid - tick)
            offset = int(rng.integers(0, 6)) * tick
            price = ref + offset if d == SELL else ref - offset
            if d == SELL and bb is not None:
                price = max(price, bb[1][0] + tick)
            if d == BUY and ba is not None:
                price = min(price, ba[1][0] - tick)
            qty = int(rng.integers(1, 200))
            bk.add(next_oid, price, qty, d)
            row = [_fmt_time(t_ns), "1", str(next_oid), str(qty), str(price), str(d)]
            next_oid += 1
        elif u < p_add + p_cancel:
            live = bk.side(d)
            if len(live) <= 2:
                continue
            oid, o = live[int(rng.integers(len(live)))]
            if rng.random() < 0.5:
                qty = int(rng.integers(1, o[1] + 1))
                event = "2" if qty < o[1] else "3"
            else:
                qty, event = o[1], "3"
            row = [_fmt_time(t_ns), event, str(oid), str(qty), str(o[0]), str(d)]
            bk.reduce(oid, qty)
        elif u < p_add + p_cancel + p_visible:
            oid, o = bk.best(d)
            if len(bk.side(d)) <= 2:
                continue
            qty = int(rng.integers(1, o[1] + 1))
            row = [_fmt_time(t_ns), "4", str(oid), str(qty), str(o[0]), str(d)]
            bk.reduce(oid, qty)
        elif u < p_add + p_cancel + p_visible + p_cross:
            oid, o = bk.best(-d)
            if len(bk.side(-d)) <= 2:
                continue
            qty = int(rng.integers(1, o[1] + 1))
            row = [_fmt_time(t_ns), "1", str(next_oid), str(qty), str(o[0]), str(d)]
            next_oid += 1
            bk.reduce(oid, qty)
        else:
            price = (ba[1][0] + bb[1][0]) // 2
            row = [_fmt_time(t_ns), "5", "0", str(int(rng.integers(1, 50))), str(price), str(d)]
        messages.append(row)
        books.append([str(x) for x in bk.levels(levels)])
    return messages, books


def write_day(directory, seed: int = 0, stem: str = "SYNTH_2021-04-01", **kwargs):
    """Write ``<stem>_message_<L>.csv`` and ``<stem>_orderbook_<L>.csv``; return both paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    levels = kwargs.get("levels", 10)
    messages, books = synthetic_day(seed=seed, **kwargs)
    mpath = directory / f"{stem}_message_{levels}.csv"
    opath = directory / f"{stem}_orderbook_{levels}.csv"
    mpath.write_text("".join(",".join(r) + "\n" for r in messages))
    opath.write_text("".join(",".join(r) + "\n" for r in books))
    return mpath, opath
