"""LOBSTER message / orderbook files and fixed-shape data windows.

Message rows are ``time, event_type, order_id, size, price, direction``.
Orderbook rows hold ``ask_p, ask_q, bid_p, bid_q`` for each level and describe
the book *after* the message on the same row.

A trading day is cut into non-overlapping windows of fixed duration.  Inside a
window, messages are grouped into steps of exactly ``n_messages`` rows; the
last partial step and every step past the window's data are zero padded so
all windows share one array shape.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal, InvalidOperation
from pathlib import Path
from typing import Optional

import numpy as np

from .book import (
    ASK,
    BID,
    CANCEL,
    DELETE,
    LIMIT,
    LOBSTER_EMPTY_ASK,
    M_OID,
    M_PRICE,
    M_QTY,
    M_SIDE,
    M_TNS,
    M_TS,
    M_TYPE,
    MESSAGE_FIELDS,
    SYNTHETIC_OID,
    BookState,
    add_order,
    make_order,
)

log = logging.getLogger(__name__)

NS = 1_000_000_000
DATA_TRADER_ID = 0
SYNTHETIC_TRADER_ID = -9000

_EVENT_MAP = {1: LIMIT, 2: CANCEL, 3: DELETE}
_EXECUTIONS = (4, 5)
_OTHER = (6, 7)


class LobsterFormatError(ValueError):
    """A malformed row; ``row`` is 1-based."""

    def __init__(self, path, row, reason):
        super().__init__(f"{path}:{row}: {reason}")
        self.path = path
        self.row = row


class EmptyWindowError(ValueError):
    pass


def split_time(text: str) -> tuple[int, int]:
    """Seconds-after-midnight text to ``(seconds, nanoseconds)``, half-even at 1 ns."""
    d = Decimal(text.strip())
    if not d.is_finite() or d < 0:
        raise ValueError(f"bad time {text!r}")
    total = (d * NS).to_integral_value(rounding=ROUND_HALF_EVEN)
    s, ns = divmod(int(total), NS)
    return s, ns


@dataclass
class ParsedMessages:
    messages: np.ndarray  # (M, 8)
    rows: np.ndarray  # raw 0-based row of each kept message
    n_rows: int
    skipped_executions: int = 0
    skipped_other: int = 0
    non_monotonic: int = 0

    def __len__(self) -> int:
        return len(self.messages)


def parse_message_row(row, path="<row>", lineno=0):
    """One LOBSTER row to ``(message or None, event_type, (time_s, time_ns))``.

    Executions (4, 5) and auction/halt rows (6, 7) come back as ``None``.
    """
    if len(row) != 6:
        raise LobsterFormatError(path, lineno, f"expected 6 columns, got {len(row)}")
    try:
        ts, tns = split_time(row[0])
        event, oid, size, price, direction = (int(x) for x in row[1:])
    except (ValueError, InvalidOperation) as e:
        raise LobsterFormatError(path, lineno, f"non-numeric field ({e})") from None
    if direction not in (1, -1):
        raise LobsterFormatError(path, lineno, f"direction must be 1 or -1, got {direction}")
    if event in _EXECUTIONS or event in _OTHER:
        return None, event, (ts, tns)
    if event not in _EVENT_MAP:
        raise LobsterFormatError(path, lineno, f"unknown event type {event}")
    side = BID if direction == 1 else ASK
    msg = np.array([_EVENT_MAP[event], side, size, price, oid, DATA_TRADER_ID, ts, tns], dtype=np.int64)
    return msg, event, (ts, tns)


def parse_message_file(path) -> ParsedMessages:
    path = Path(path)
    msgs, rows = [], []
    out = ParsedMessages(np.empty((0, MESSAGE_FIELDS), dtype=np.int64), np.empty(0, dtype=np.int64), 0)
    last = (-1, -1)
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if not row:
                raise LobsterFormatError(path, i + 1, "empty row")
            msg, event, t = parse_message_row(row, path, i + 1)
            out.n_rows += 1
            if t < last:
                out.non_monotonic += 1
                log.warning("%s:%d: time goes backwards", path, i + 1)
            last = max(last, t)
            if msg is None:
                if event in _EXECUTIONS:
                    out.skipped_executions += 1
                else:
                    out.skipped_other += 1
                continue
            msgs.append(msg)
            rows.append(i)
    if msgs:
        out.messages = np.stack(msgs)
        out.rows = np.array(rows, dtype=np.int64)
    return out


def parse_orderbook_file(path, levels: Optional[int] = None) -> np.ndarray:
    """Orderbook CSV to an ``(R, 4 * levels)`` int64 array."""
    path = Path(path)
    rows = []
    width = None
    with open(path, newline="") as f:
        for i, row in enumerate(csv.reader(f)):
            if width is None:
                width = len(row)
                if width % 4 or width == 0 or (levels is not None and width != 4 * levels):
                    raise LobsterFormatError(path, i + 1, f"bad orderbook column count {width}")
            elif len(row) != width:
                raise LobsterFormatError(path, i + 1, f"expected {width} columns, got {len(row)}")
            try:
                rows.append([int(x) for x in row])
            except ValueError as e:
                raise LobsterFormatError(path, i + 1, f"non-numeric field ({e})") from None
    if not rows:
        return np.empty((0, 4 * (levels or 10)), dtype=np.int64)
    return np.array(rows, dtype=np.int64)


@dataclass
class Level2:
    asks: np.ndarray  # (k, 2) price, volume; best first
    bids: np.ndarray


def parse_snapshot_row(row, levels: int = 10) -> Level2:
    r = np.asarray(row, dtype=np.int64)
    if r.shape != (4 * levels,):
        raise LobsterFormatError("<snapshot>", 0, f"expected {4 * levels} columns, got {r.size}")
    grid = r.reshape(levels, 4)
    ap, aq, bp, bq = grid.T
    ask_ok = (ap > 0) & (ap < LOBSTER_EMPTY_ASK) & (aq > 0)
    bid_ok = (bp > 0) & (bq > 0)
    asks = np.column_stack([ap[ask_ok], aq[ask_ok]])
    bids = np.column_stack([bp[bid_ok], bq[bid_ok]])
    asks = asks[np.argsort(asks[:, 0], kind="stable")]
    bids = bids[np.argsort(-bids[:, 0], kind="stable")]
    return Level2(asks, bids)


def build_initial_book(l2: Level2, capacity: int, time: tuple[int, int] = (0, 0),
                       trade_capacity: Optional[int] = None) -> BookState:
    """One synthetic order per level; ids -9000, -9001, ... asks first, then bids."""
    bk = BookState.empty(capacity, trade_capacity)
    oid = SYNTHETIC_OID
    for side, levels in ((ASK, l2.asks), (BID, l2.bids)):
        for price, vol in levels:
            add_order(bk, side, make_order(price, vol, oid, SYNTHETIC_TRADER_ID, time[0], time[1]))
            oid -= 1
    return bk


@dataclass
class DataWindow:
    messages: np.ndarray  # (n_steps_max, n_messages, 8)
    real_step_count: int
    start_time: tuple[int, int]
    initial_book: BookState
    window_index: int

    @property
    def is_empty(self) -> bool:
        return self.real_step_count == 0


@dataclass
class WindowSet:
    """Every window of a day stacked into fixed-shape arrays."""

    messages: np.ndarray  # (W, S, n_messages, 8)
    real_steps: np.ndarray  # (W,)
    start_times: np.ndarray  # (W, 2)
    init_asks: np.ndarray  # (W, N, 6)
    init_bids: np.ndarray
    window_duration_s: int
    max_oid: int
    trade_capacity: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.messages.shape[0]

    @property
    def n_messages(self) -> int:
        return self.messages.shape[2]

    @property
    def n_steps_max(self) -> int:
        return self.messages.shape[1]

    @property
    def capacity(self) -> int:
        return self.init_asks.shape[1]

    def initial_book(self, w: int) -> BookState:
        bk = BookState.empty(self.capacity, self.trade_capacity or None)
        bk.asks[:] = self.init_asks[w]
        bk.bids[:] = self.init_bids[w]
        return bk

    def step_messages(self, w: int, step: int) -> np.ndarray:
        """Real (non-padding) messages of one step."""
        block = self.messages[w, step]
        return block[np.any(block, axis=1)]

    def __getitem__(self, w: int) -> DataWindow:
        if not -len(self) <= w < len(self):
            raise IndexError(w)
        w %= len(self)
        return DataWindow(self.messages[w], int(self.real_steps[w]),
                          (int(self.start_times[w, 0]), int(self.start_times[w, 1])),
                          self.initial_book(w), w)

    def nonempty(self) -> list:
        return [int(w) for w in np.flatnonzero(self.real_steps > 0)]


def undo_message(l2: Level2, msg: np.ndarray) -> Level2:
    """Level-2 state just before ``msg`` given the state just after it.

    Only needed for the very first row of a file, whose pre-message book is
    not recorded.  Adds are removed, cancels and deletes are put back.
    """
    is_ask = msg[M_SIDE] == ASK
    levels = {int(p): int(q) for p, q in (l2.asks if is_ask else l2.bids)}
    price, qty = int(msg[M_PRICE]), int(msg[M_QTY])
    if msg[M_TYPE] == LIMIT:
        levels[price] = levels.get(price, 0) - qty
    elif msg[M_TYPE] in (CANCEL, DELETE):
        levels[price] = levels.get(price, 0) + qty
    kept = sorted(((p, q) for p, q in levels.items() if q > 0), reverse=not is_ask)
    arr = np.array(kept, dtype=np.int64).reshape(-1, 2)
    return Level2(arr, l2.bids) if is_ask else Level2(l2.asks, arr)


def _snapshot_before(raw_row: int, snapshots: np.ndarray) -> np.ndarray:
    # orderbook row i is the book after message i; the book before row r is row r - 1
    return snapshots[max(raw_row - 1, 0)]


def build_windows(parsed: ParsedMessages, snapshots: np.ndarray, window_duration_s: int = 1800,
                  n_messages: int = 100, capacity: int = 100, levels: Optional[int] = None,
                  origin_s: Optional[int] = None, n_steps_max: Optional[int] = None,
                  trade_capacity: Optional[int] = None) -> WindowSet:
    """Cut a parsed day into windows ``[origin + w*D, origin + (w+1)*D)``."""
    if window_duration_s <= 0 or n_messages <= 0 or capacity <= 0:
        raise ValueError("window_duration_s, n_messages and capacity must be positive")
    if len(snapshots) < parsed.n_rows:
        raise ValueError(f"{len(snapshots)} orderbook rows for {parsed.n_rows} message rows")
    levels = levels or snapshots.shape[1] // 4
    msgs = parsed.messages
    if len(msgs) == 0:
        raise EmptyWindowError("no replayable messages")
    t_ns = msgs[:, M_TS] * NS + msgs[:, M_TNS]
    origin = int(msgs[0, M_TS]) if origin_s is None else int(origin_s)
    dur_ns = window_duration_s * NS
    w_of = (t_ns - origin * NS) // dur_ns
    if (w_of < 0).any():
        raise ValueError("messages before the window origin")
    n_windows = int(w_of.max()) + 1
    counts = np.bincount(w_of, minlength=n_windows)
    steps = -(-counts // n_messages)
    s_max = int(steps.max())
    if n_steps_max is not None:
        if n_steps_max < s_max:
            raise ValueError(f"n_steps_max={n_steps_max} but the busiest window needs {s_max}")
        s_max = n_steps_max

    out = np.zeros((n_windows, s_max, n_messages, MESSAGE_FIELDS), dtype=np.int64)
    init_asks = np.empty((n_windows, capacity, 6), dtype=np.int64)
    init_bids = np.empty((n_windows, capacity, 6), dtype=np.int64)
    starts = np.zeros((n_windows, 2), dtype=np.int64)
    starts[:, 0] = origin + np.arange(n_windows) * window_duration_s
    bounds = np.searchsorted(w_of, np.arange(n_windows + 1))
    overflow = 0
    for w in range(n_windows):
        lo, hi = bounds[w], bounds[w + 1]
        if hi > lo:
            block = np.zeros((steps[w] * n_messages, MESSAGE_FIELDS), dtype=np.int64)
            block[: hi - lo] = msgs[lo:hi]
            out[w, : steps[w]] = block.reshape(steps[w], n_messages, MESSAGE_FIELDS)
            snap = _snapshot_before(int(parsed.rows[lo]), snapshots)
            l2 = parse_snapshot_row(snap, levels)
            if parsed.rows[lo] == 0:
                l2 = undo_message(l2, msgs[lo])
        else:
            log.warning("window %d has no messages", w)
            # state after the last message preceding this window
            prev = parsed.rows[lo - 1] + 1 if lo > 0 else 0
            l2 = parse_snapshot_row(_snapshot_before(int(prev), snapshots), levels)
        bk = build_initial_book(l2, capacity, (int(starts[w, 0]), 0))
        overflow += bk.add_overflow_count
        init_asks[w], init_bids[w] = bk.asks, bk.bids
    if overflow:
        log.warning("%d snapshot levels did not fit capacity %d", overflow, capacity)
    max_oid = int(max(msgs[:, M_OID].max(), 0))
    return WindowSet(out, steps.astype(np.int64), starts, init_asks, init_bids,
                     int(window_duration_s), max_oid, int(trade_capacity or 0),
                     meta={"levels": levels, "origin_s": origin, "snapshot_overflow": overflow})


def windows_from_steps(initial_book: BookState, steps, start_s: int = 34200,
                       window_duration_s: int = 1800, n_messages: Optional[int] = None) -> WindowSet:
    """Single-window set from an explicit opening book and per-step message blocks.

    Handy for hand-built scenarios; ``steps`` is a list of ``(m_k, 8)`` arrays.
    """
    blocks = [np.asarray(b, dtype=np.int64).reshape(-1, MESSAGE_FIELDS) for b in steps]
    n_messages = n_messages or max(len(b) for b in blocks)
    out = np.zeros((1, len(blocks), n_messages, MESSAGE_FIELDS), dtype=np.int64)
    for k, b in enumerate(blocks):
        if not 1 <= len(b) <= n_messages:
            raise ValueError(f"step {k} has {len(b)} messages; need 1..{n_messages}")
        out[0, k, : len(b)] = b
    ids = [initial_book.asks[:, 2].max(), initial_book.bids[:, 2].max()] + [b[:, 4].max() for b in blocks]
    return WindowSet(out, np.array([len(blocks)]), np.array([[start_s, 0]]), initial_book.asks[None].copy(),
                     initial_book.bids[None].copy(), int(window_duration_s), int(max(max(ids), 0)))


def load_day(messages_path, orderbook_path, **kwargs) -> WindowSet:
    parsed = parse_message_file(messages_path)
    snaps = parse_orderbook_file(orderbook_path, kwargs.get("levels"))
    ws = build_windows(parsed, snaps, **kwargs)
    ws.meta.update(skipped_executions=parsed.skipped_executions, skipped_other=parsed.skipped_other,
                   non_monotonic=parsed.non_monotonic)
    return ws


# ---------------------------------------------------------------------------
# binary cache
#
# layout (all integers little-endian):
#   8 bytes  magic b"ALOBWIN\0"
#   u32      format version (1)
#   u32      number of header int64 fields (8)
#   i64 x 8  W, S, n_messages, capacity, window_duration_s, max_oid, trade_capacity, levels
#   i64      messages      W*S*n_messages*8
#   i64      real_steps    W
#   i64      start_times   W*2
#   i64      init_asks     W*capacity*6
#   i64      init_bids     W*capacity*6
# ---------------------------------------------------------------------------

CACHE_MAGIC = b"ALOBWIN\0"
CACHE_VERSION = 1
_HEADER_FIELDS = 8


def save_windows(ws: WindowSet, path) -> None:
    w, s, m, _ = ws.messages.shape
    header = [w, s, m, ws.capacity, ws.window_duration_s, ws.max_oid, ws.trade_capacity,
              int(ws.meta.get("levels", 10))]
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<II", CACHE_VERSION, _HEADER_FIELDS))
        f.write(struct.pack("<8q", *header))
        for arr in (ws.messages, ws.real_steps, ws.start_times, ws.init_asks, ws.init_bids):
            f.write(np.ascontiguousarray(arr, dtype="<i8").tobytes())


def load_windows(path) -> WindowSet:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != CACHE_MAGIC:
        raise ValueError(f"{path}: not a window cache")
    version, n_fields = struct.unpack_from("<II", data, 8)
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    header = struct.unpack_from(f"<{n_fields}q", data, 16)
    w, s, m, cap, dur, max_oid, tcap, levels = header[:_HEADER_FIELDS]
    off = 16 + 8 * n_fields
    arrays = []
    for shape in ((w, s, m, MESSAGE_FIELDS), (w,), (w, 2), (w, cap, 6), (w, cap, 6)):
        n = int(np.prod(shape))
        arrays.append(np.frombuffer(data, dtype="<i8", count=n, offset=off).astype(np.int64).reshape(shape))
        off += 8 * n
    if off != len(data):
        raise ValueError(f"{path}: trailing or missing bytes")
    return WindowSet(*arrays, window_duration_s=int(dur), max_oid=int(max_oid), trade_capacity=int(tcap),
                     meta={"levels": int(levels)})
