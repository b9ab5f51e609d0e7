import csv
import json

import pytest

from arraylob import cli
from arraylob.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, RunConfig, build_parser, main, resolve_config

HAND_MESSAGES = [
    "34200.1,1,1,10,1000,-1",  # sell 10 @ 1000 rests
    "34200.2,1,2,4,1000,1",  # buy 4 @ 1000 crosses it
    "34200.3,3,1,6,1000,-1",  # the remaining 6 are deleted
]
HAND_BOOK = [
    "1000,10,990,5",
    "1000,6,990,5",
    "9999999999,0,990,5",
]


@pytest.fixture
def hand_day(tmp_path):
    m, o = tmp_path / "m.csv", tmp_path / "o.csv"
    m.write_text("\n".join(HAND_MESSAGES) + "\n")
    o.write_text("\n".join(HAND_BOOK) + "\n")
    return m, o


@pytest.fixture(scope="module")
def synth_day(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out", str(d), "--seed", "3", "--n-messages", "3000"]) == EXIT_OK
    return d / "SYNTH_2021-04-01_message_10.csv", d / "SYNTH_2021-04-01_orderbook_10.csv"


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_replay_hand_trace(hand_day, tmp_path):
    m, o = hand_day
    out = tmp_path / "out"
    rc = main(["replay", "--messages", str(m), "--orderbook", str(o), "--n-messages", "1",
               "--capacity", "10", "--out", str(out)])
    assert rc == EXIT_OK
    l2 = _rows(out / "l2.csv")
    assert l2[0] == ["window", "step", "time_s", "time_ns", "ask_price_1", "ask_size_1", "bid_price_1",
                     "bid_size_1"] + [c for i in range(2, 11) for c in
                                      (f"ask_price_{i}", f"ask_size_{i}", f"bid_price_{i}", f"bid_size_{i}")]
    got = [r[:8] for r in l2[1:]]
    assert got == [
        ["0", "0", "34200", "100000000", "1000", "10", "990", "5"],
        ["0", "1", "34200", "200000000", "1000", "6", "990", "5"],
        ["0", "2", "34200", "300000000", "9999999999", "0", "990", "5"],
    ]
    assert _rows(out / "trades.csv")[1:] == [["0", "1", "1000", "4", "2", "1", "34200", "200000000"]]


def test_replay_byte_identical(synth_day, tmp_path):
    m, o = synth_day
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["replay", "--messages", str(m), "--orderbook", str(o), "--window-min", "5",
                     "--n-messages", "20", "--out", str(out)]) == EXIT_OK
        outs.append(out)
    for f in ("trades.csv", "l2.csv", "replay_summary.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert len(_rows(outs[0] / "trades.csv")) > 1


def test_truncated_file_reports_row(hand_day, tmp_path, capsys):
    m, o = hand_day
    m.write_text("\n".join(HAND_MESSAGES[:2] + ["34200.3,3,1,6"]) + "\n")
    rc = main(["replay", "--messages", str(m), "--orderbook", str(o), "--out", str(tmp_path / "x")])
    assert rc == EXIT_DATA
    assert ":3:" in capsys.readouterr().err


def test_missing_file_is_data_error(tmp_path):
    rc = main(["replay", "--messages", str(tmp_path / "nope.csv"), "--orderbook", str(tmp_path / "o.csv")])
    assert rc == EXIT_DATA


@pytest.mark.parametrize("argv", [
    ["replay", "--messages", "m", "--orderbook", "o", "--capacity", "0"],
    ["replay", "--messages", "m"],
    ["rollout", "--messages", "m", "--orderbook", "o", "--task-side", "hold"],
    ["rollout", "--messages", "m", "--orderbook", "o", "--window-min", "-1"],
    ["bench", "--trials", "0"],
])
def test_bad_config_exit_code(argv):
    assert main(argv) == EXIT_CONFIG


def test_argparse_errors_use_config_code():
    with pytest.raises(SystemExit) as e:
        main(["rollout", "--capacity", "ten"])
    assert e.value.code == EXIT_CONFIG


def test_config_file_then_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"capacity": 50, "n-messages": 7, "lambda": 0.5, "--seed": 4}))
    args = build_parser().parse_args(["rollout", "--config", str(cfg), "--capacity", "60"])
    c = resolve_config(args)
    assert (c.capacity, c.n_messages, c.lam, c.seed) == (60, 7, 0.5, 4)
    assert c.task_size == RunConfig().task_size


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"capacty": 50}))
    assert main(["bench", "--config", str(cfg)]) == EXIT_CONFIG


def test_data_root_env(hand_day, tmp_path, monkeypatch):
    m, o = hand_day
    monkeypatch.setenv(cli.DATA_ROOT_ENV, str(m.parent))
    rc = main(["replay", "--messages", m.name, "--orderbook", o.name, "--capacity", "10",
               "--out", str(tmp_path / "env")])
    assert rc == EXIT_OK


def _rollout(synth_day, out, *extra):
    m, o = synth_day
    argv = ["rollout", "--messages", str(m), "--orderbook", str(o), "--window-min", "5", "--n-messages", "20",
            "--task-size", "300", "--out", str(out), *extra]
    assert main(argv) == EXIT_OK
    return json.loads((out / "report.json").read_text())


def test_rollout_zero_policy_completes_only_when_forced(synth_day, tmp_path):
    rep = _rollout(synth_day, tmp_path / "z", "--policy", "zero")
    assert rep["episodes"]
    for ep in rep["episodes"]:
        assert ep["forced"]
        assert ep["completion_step"] == -1 or ep["completion_step"] >= ep["forced_step"]
        assert ep["quantity_executed"] + ep["shortfall"] == 300


def test_rollout_batch_invariance_and_row_count(synth_day, tmp_path):
    a = _rollout(synth_day, tmp_path / "k1", "--policy", "twap", "--episodes", "16", "--batch", "1")
    b = _rollout(synth_day, tmp_path / "k16", "--policy", "twap", "--episodes", "16", "--batch", "16")
    assert len(a["episodes"]) == len(b["episodes"]) == 16
    assert json.dumps(a["episodes"]) == json.dumps(b["episodes"])
    assert len(_rows(tmp_path / "k1" / "episodes.csv")) == 17


def test_bench_tables(tmp_path):
    out = tmp_path / "bench"
    rc = main(["bench", "--trials", "20", "--bench-batches", "1,4", "--out", str(out)])
    assert rc == EXIT_OK
    t1 = _rows(out / "table1.csv")
    assert [r[0] for r in t1[1:]] == ["10", "100", "1000"]
    assert {"add_median_us", "cancel_median_us", "match_median_us"} <= set(t1[0])
    assert [r[0] for r in _rows(out / "table2.csv")[1:]] == ["0", "10", "500", "1000", "10000"]
    assert len(_rows(out / "batch.csv")) == 1 + 2 * 3
