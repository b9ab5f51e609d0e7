import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from arraylob import book as lob
from arraylob.book import ASK, BID, CANCEL, DELETE, EMPTY, LIMIT, MARKET, BookState, make_message, make_order
from reference_matcher import ReferenceBook, random_stream


def _book_with_asks(rows, capacity=10):
    bk = BookState.empty(capacity)
    for r in rows:
        assert lob.add_order(bk, ASK, make_order(*r))
    return bk


@pytest.fixture
def three_asks():
    # (price, qty, oid, tid, ts, tns)
    return _book_with_asks([(1000, 2, 1, 0, 0, 0), (1000, 3, 2, 0, 1, 0), (1001, 10, 3, 0, 2, 0)])


# region add / cancel


def test_add_into_empty_side():
    bk = BookState.empty(10)
    assert lob.add_order(bk, ASK, make_order(1000, 5, 7))
    assert bk.asks[0].tolist() == [1000, 5, 7, 0, 0, 0]
    assert (bk.asks[1:] == EMPTY).all()


def test_add_fills_lowest_empty_slot():
    bk = BookState.empty(5)
    for oid in (1, 2, 3):
        lob.add_order(bk, BID, make_order(990, 1, oid))
    lob.cancel_order(bk, BID, 990, 2, 1)
    lob.add_order(bk, BID, make_order(991, 4, 9))
    assert bk.bids[1, lob.OID] == 9


def test_add_overflow_leaves_side_unchanged():
    bk = BookState.empty(3)
    for oid in (1, 2, 3):
        lob.add_order(bk, ASK, make_order(1000 + oid, 1, oid))
    before = bk.asks.copy()
    assert not lob.add_order(bk, ASK, make_order(999, 1, 4))
    assert np.array_equal(bk.asks, before)
    assert bk.add_overflow_count == 1
    # the oracle also refuses the insert past capacity
    ref = ReferenceBook(3)
    for oid in (1, 2, 3):
        ref.add(ASK, 1000 + oid, 1, oid, 0, 0, 0)
    assert not ref.add(ASK, 999, 1, 4, 0, 0, 0)


def test_partial_cancel():
    bk = _book_with_asks([(1000, 10, 7, 0, 0, 0)])
    lob.cancel_order(bk, ASK, 1000, 7, 4)
    assert bk.asks[0, :3].tolist() == [1000, 6, 7]


def test_full_cancel_resets_slot():
    bk = _book_with_asks([(1000, 10, 7, 0, 0, 0)])
    lob.cancel_order(bk, ASK, 1000, 7, 10)
    assert (bk.asks[0] == EMPTY).all()


def test_oversized_cancel_deletes():
    bk = _book_with_asks([(1000, 10, 7, 0, 0, 0)])
    lob.cancel_order(bk, ASK, 1000, 7, 25)
    assert (bk.asks == EMPTY).all()


def test_cancel_hits_synthetic_order_by_price():
    bk = _book_with_asks([(1000, 10, -9003, -9000, 0, 0)])
    assert lob.cancel_order(bk, ASK, 1000, 55, 3)
    assert bk.asks[0, :3].tolist() == [1000, 7, -9003]
    ref = ReferenceBook(10)
    ref.add(ASK, 1000, 10, -9003, -9000, 0, 0)
    ref.cancel(ASK, 1000, 55, 3)
    assert ref.resting(ASK)[0][:3] == (1000, 7, -9003)


def test_cancel_prefers_exact_oid_over_synthetic():
    bk = _book_with_asks([(1000, 10, -9001, -9000, 0, 0), (1000, 5, 55, 0, 1, 0)])
    lob.cancel_order(bk, ASK, 1000, 55, 3)
    assert bk.asks[0, lob.QTY] == 10
    assert bk.asks[1, lob.QTY] == 2


def test_cancel_synthetic_needs_matching_price():
    bk = _book_with_asks([(1000, 10, -9001, -9000, 0, 0)])
    before = bk.asks.copy()
    assert not lob.cancel_order(bk, ASK, 1001, 55, 3)
    assert np.array_equal(bk.asks, before)


def test_unknown_cancel_is_bit_identical_noop():
    bk = _book_with_asks([(1000, 10, 7, 0, 0, 0), (1002, 1, 8, 0, 0, 0)])
    before = bk.copy()
    bk.process(make_message(CANCEL, ASK, 3, 1000, 999))
    assert np.array_equal(bk.asks, before.asks)
    assert np.array_equal(bk.bids, before.bids)
    assert bk.unknown_cancels == 1


# endregion

# region best price / priority


def test_best_price_ask_is_min():
    bk = _book_with_asks([(1000, 1, 1, 0, 0, 0), (1001, 1, 2, 0, 0, 0), (999, 1, 3, 0, 0, 0)])
    assert lob.best_price(bk.asks, ASK) == 999


def test_best_price_bid_is_max():
    bk = BookState.empty(5)
    lob.add_order(bk, BID, make_order(998, 1, 1))
    lob.add_order(bk, BID, make_order(997, 1, 2))
    assert lob.best_price(bk.bids, BID) == 998


def test_best_price_empty_side_absent():
    bk = BookState.empty(5)
    assert lob.best_price(bk.asks, ASK) is None
    assert lob.best_standing_order(bk.bids, BID) is None


def test_earlier_time_wins_at_equal_price():
    bk = _book_with_asks([(1000, 1, 1, 0, 5, 0), (1000, 1, 2, 0, 4, 999)])
    assert lob.best_standing_order(bk.asks, ASK) == 1


def test_price_dominates_time():
    bk = _book_with_asks([(1001, 1, 1, 0, 1, 0), (1000, 1, 2, 0, 9, 0)])
    assert lob.best_standing_order(bk.asks, ASK) == 1


def test_identical_timestamps_break_on_lowest_slot():
    bk = _book_with_asks([(1005, 1, 1, 0, 0, 0), (1006, 1, 2, 0, 0, 0), (1000, 1, 3, 0, 5, 0),
                          (1007, 1, 4, 0, 0, 0), (1000, 1, 5, 0, 5, 0)])
    assert lob.best_standing_order(bk.asks, ASK) == 2
    # oracle: insertion order, which equals slot order here
    ref = ReferenceBook(10)
    for i, r in enumerate(bk.asks[:5]):
        ref.add(ASK, int(r[0]), 1, int(r[2]), 0, int(r[4]), 0)
    assert ref.orders[ASK][ref.keys[ASK][0]][2] == bk.asks[2, lob.OID]


# endregion

# region matching


def test_match_empty_side_returns_full_remainder():
    bk = BookState.empty(5)
    rem = lob.match_against(bk, make_order(1000, 5, 99), ASK)
    assert rem == 5
    assert bk.trade_count == 0


def test_match_walks_two_orders(three_asks):
    bk = three_asks
    rem = lob.match_against(bk, make_order(1000, 4, 99, 0, 7, 11), ASK)
    assert rem == 0
    tape = bk.trade_tape()
    assert tape.tolist() == [[1000, 2, 99, 1, 7, 11], [1000, 2, 99, 2, 7, 11]]
    resting = sorted(map(tuple, bk.resting(ASK)[:, :3].tolist()))
    assert resting == [(1000, 1, 2), (1001, 10, 3)]


def test_match_walk_agrees_with_reference():
    ref = ReferenceBook(10)
    for r in [(1000, 2, 1, 0, 0, 0), (1000, 3, 2, 0, 1, 0), (1001, 10, 3, 0, 2, 0)]:
        ref.add(ASK, r[0], r[1], r[2], r[3], r[4], r[5])
    assert ref.match(BID, 1000, 4, 99, 7, 11) == 0
    assert ref.trades == [(1000, 2, 99, 1, 7, 11), (1000, 2, 99, 2, 7, 11)]


def test_no_overlap_no_trade():
    bk = _book_with_asks([(1000, 2, 1, 0, 0, 0)])
    assert lob.match_against(bk, make_order(999, 4, 99), ASK) == 4
    assert bk.trade_count == 0


def test_trade_price_is_standing_price():
    bk = _book_with_asks([(1000, 2, 1, 0, 0, 0)])
    lob.match_against(bk, make_order(1010, 1, 99), ASK)
    assert bk.trade_tape()[0, lob.T_PRICE] == 1000


# endregion

# region process_message


def test_non_marketable_limit_rests():
    bk = _book_with_asks([(1000, 2, 1, 0, 0, 0)])
    bk.process(make_message(LIMIT, BID, 3, 999, 50, 2, 1, 0))
    assert bk.resting(BID).tolist() == [[999, 3, 50, 2, 1, 0]]
    assert bk.trade_count == 0


def test_marketable_limit_fully_filled_adds_nothing(three_asks):
    bk = three_asks
    bk.process(make_message(LIMIT, BID, 4, 1000, 99))
    assert bk.trade_count == 2
    assert len(bk.resting(BID)) == 0


def test_marketable_limit_remainder_rests_at_limit():
    bk = _book_with_asks([(1000, 2, 1, 0, 0, 0)])
    bk.process(make_message(LIMIT, BID, 5, 1000, 99, 4, 3, 0))
    assert bk.resting(BID).tolist() == [[1000, 3, 99, 4, 3, 0]]


def test_market_sell_discards_remainder():
    bk = BookState.empty(5)
    lob.add_order(bk, BID, make_order(998, 3, 1))
    bk.process(make_message(MARKET, ASK, 10, 0, 50))
    assert bk.trade_tape()[:, :4].tolist() == [[998, 3, 50, 1]]
    assert len(bk.resting(BID)) == 0
    assert len(bk.resting(ASK)) == 0


def test_market_buy_ignores_price_field():
    bk = _book_with_asks([(1000, 2, 1, 0, 0, 0), (5000, 2, 2, 0, 0, 0)])
    bk.process(make_message(MARKET, BID, 4, 1, 50))
    assert bk.trade_tape()[:, lob.T_PRICE].tolist() == [1000, 5000]


def test_cancel_and_delete_behave_identically():
    a = _book_with_asks([(1000, 10, 7, 0, 0, 0)])
    b = a.copy()
    a.process(make_message(CANCEL, ASK, 4, 1000, 7))
    b.process(make_message(DELETE, ASK, 4, 1000, 7))
    assert a.identical(b)


@pytest.mark.parametrize("msg", [[9, BID, 1, 1000, 1, 0, 0, 0], [LIMIT, 0, 1, 1000, 1, 0, 0, 0],
                                 [0] * 8])
def test_malformed_message_counted_and_skipped(msg):
    bk = _book_with_asks([(1000, 10, 7, 0, 0, 0)])
    before = bk.copy()
    bk.process(msg)
    assert bk.protocol_errors == 1
    assert np.array_equal(bk.asks, before.asks)


def test_trade_log_overflow_still_fills():
    bk = BookState.empty(5, trade_capacity=1)
    for oid in (1, 2, 3):
        lob.add_order(bk, ASK, make_order(1000, 1, oid, 0, oid, 0))
    bk.process(make_message(MARKET, BID, 3, 0, 50))
    assert len(bk.resting(ASK)) == 0
    assert bk.trade_count == 1
    assert bk.dropped_trades == 2


def test_self_trade_allowed():
    bk = BookState.empty(5)
    bk.process(make_message(LIMIT, ASK, 1, 1000, 1, 7))
    bk.process(make_message(LIMIT, BID, 1, 1000, 2, 7))
    assert bk.trade_count == 1


# endregion

# region l2


def test_l2_aggregates_by_price():
    bk = _book_with_asks([(1000, 2, 1, 0, 0, 0), (1000, 3, 2, 0, 0, 0), (1002, 5, 3, 0, 0, 0)])
    snap = lob.l2_snapshot(bk, 2)
    assert snap[:, :2].tolist() == [[1000, 5], [1002, 5]]


def test_l2_empty_book_uses_placeholders():
    snap = lob.l2_snapshot(BookState.empty(3), 1)
    assert snap.tolist() == [[lob.LOBSTER_EMPTY_ASK, 0, lob.LOBSTER_EMPTY_BID, 0]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_l2_matches_reference(seed, levels):
    rng = np.random.default_rng(seed)
    msgs, ref = random_stream(rng, 150, 40)
    bk = BookState.empty(40, trade_capacity=4000).process_many(np.array(msgs))
    snap = lob.l2_snapshot(bk, levels)
    asks = [(int(p), int(v)) for p, v in snap[:, :2] if v > 0]
    bids = [(int(p), int(v)) for p, v in snap[:, 2:] if v > 0]
    assert asks == ref.l2(ASK, levels)
    assert bids == ref.l2(BID, levels)


# endregion

# region properties


def _check_sentinels(side):
    empty = (side == EMPTY).all(axis=1)
    occupied = (side != EMPTY).all(axis=1)
    assert (empty | occupied).all()
    assert (side[occupied, lob.QTY] >= 1).all()
    assert (side[occupied, lob.PRICE] >= 1).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stream_invariants(seed):
    rng = np.random.default_rng(seed)
    msgs, _ = random_stream(rng, 300, 30)
    bk = BookState.empty(30, trade_capacity=10_000)
    for m in msgs:
        bk.process(m)
        _check_sentinels(bk.asks)
        _check_sentinels(bk.bids)
        a, b = bk.best_ask, bk.best_bid
        if a is not None and b is not None:
            assert a > b
        live = np.concatenate([bk.resting(ASK), bk.resting(BID)])[:, lob.OID]
        assert len(set(live.tolist())) == len(live)
    tape = bk.trade_tape()
    assert (tape[:, lob.T_QTY] >= 1).all()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_quantity_conservation(seed):
    rng = np.random.default_rng(seed)
    msgs, ref = random_stream(rng, 400, 50)
    bk = BookState.empty(50, trade_capacity=10_000).process_many(np.array(msgs))
    assert bk.add_overflow_count == 0
    tape = bk.trade_tape()
    limit_oids = {m[4] for m in msgs if m[0] == LIMIT}
    submitted = {}
    for m in msgs:
        if m[0] == LIMIT:
            submitted[m[4]] = m[2]
    resting = {}
    for side in (ASK, BID):
        for r in bk.resting(side):
            resting[int(r[lob.OID])] = int(r[lob.QTY])
    filled = {}
    for t in tape:
        for oid in (int(t[lob.T_AGGR_OID]), int(t[lob.T_STAND_OID])):
            filled[oid] = filled.get(oid, 0) + int(t[lob.T_QTY])
    for oid in limit_oids:
        assert submitted[oid] == resting.get(oid, 0) + filled.get(oid, 0) + ref.cancelled.get(oid, 0)
    # market orders: filled + discarded equals submitted
    market = sum(m[2] for m in msgs if m[0] == MARKET)
    market_filled = sum(filled.get(m[4], 0) for m in msgs if m[0] == MARKET)
    assert market == market_filled + ref.discarded


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_reference_equivalence_small(seed):
    rng = np.random.default_rng(seed)
    msgs, ref = random_stream(rng, 500, 60)
    bk = BookState.empty(60, trade_capacity=10_000).process_many(np.array(msgs))
    assert [tuple(t) for t in bk.trade_tape().tolist()] == ref.trades
    for side in (ASK, BID):
        assert sorted(map(tuple, bk.resting(side).tolist())) == ref.resting(side)
    assert bk.unknown_cancels == ref.unknown_cancels


# endregion
