import csv

import numpy as np
import pytest

from distbeam.distnet import Mailbox, TxLedger, format_cost_table, ledger_check, cost_table
from distbeam.distnet.ledger import LedgerError, expected_output_cost, expected_weight_cost


def test_table_rows_by_hand():
    t = cost_table(5, 2, 3, 1)
    assert t == {
        "BDLCMV/BDLCMP (cyclic)": 20,
        "BDLCMV/BDLCMP (acyclic)": 52,
        "BDLCMV (acyclic, unchanged P)": 0,
        "DLCMV (acyclic)": 7,
        "DGSC (acyclic)": 19,
        "TI-DANSE (cyclic)": 28,
        "output (cyclic)": 5,
        "output (acyclic)": 4,
    }
    assert cost_table(5, 4, 3)["BDLCMV/BDLCMP (acyclic)"] == 44
    assert cost_table(5, 1, 0, 10)["BDLCMV/BDLCMP (cyclic)"] == 50


def test_format_cost_table_lists_every_row():
    text = format_cost_table(5, 2, 3, 10)
    lines = text.splitlines()
    assert lines[0].startswith("# N=5 K=2 r=3 t_max=10")
    values = dict((ln.rsplit(None, 1)[0].strip(), int(ln.rsplit(None, 1)[1])) for ln in lines[1:])
    assert values == cost_table(5, 2, 3, 10)


def test_mailbox_charges_once_per_broadcast():
    ledger = TxLedger(4, "BDLCMP", "cyclic")
    ledger.begin_frame(0)
    box = Mailbox(ledger, "weight")
    box.broadcast(1, [2, 3, 4], np.zeros((4, 3)))
    box.send(2, 1, np.zeros((4, 5)))
    box.broadcast(3, [], np.zeros((4, 9)))  # nobody listening: nothing sent
    assert ledger.per_bin_constant(0, "weight") == 8
    assert [s for s, _ in box.receive(1)] == [2] and box.receive(1) == []
    assert len(box.receive(4)) == 1


def test_counts_per_frame_and_bin():
    ledger = TxLedger(3, "X")
    ledger.begin_frame(0)
    ledger.charge("output", 2)
    ledger.begin_frame(1)
    ledger.charge("weight", 1, bins=[0, 2])
    assert ledger.frames == [0, 1]
    np.testing.assert_array_equal(ledger.counts(1, "weight"), [1, 0, 1])
    assert ledger.total() == 8 and ledger.total("weight") == 2
    assert ledger.counts(1, "weight").dtype.kind == "i"
    with pytest.raises(LedgerError):
        ledger.per_bin_constant(1, "weight")
    with pytest.raises(LedgerError):
        ledger.charge("gossip", 1)


def test_rows_and_csv(tmp_path):
    ledger = TxLedger(2, "BDLCMV")
    ledger.begin_frame(0)
    ledger.charge("weight", 4)
    ledger.charge("output", 1, bins=[1])
    rows = list(ledger.rows(per_bin=False))
    assert rows == [(0, -1, "weight", "BDLCMV", 4), (0, 0, "output", "BDLCMV", 0),
                    (0, 1, "output", "BDLCMV", 1)]
    p = tmp_path / "ledger.csv"
    ledger.to_csv(p)
    with open(p) as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["frame", "bin", "phase", "algorithm", "scalars"]
    assert len(table) == 1 + 4


def test_ledger_check_report():
    ledger = TxLedger(2)
    ledger.begin_frame(0)
    ledger.charge("weight", 52)
    ledger.charge("output", 4)
    ok = ledger_check(ledger, 0, weight_mode="acyclic", output_mode="acyclic", N=5, K=2, r=3)
    assert ok["ok"] and ok["weight"] == (52, 52)
    bad = ledger_check(ledger, 0, weight_mode="cyclic", output_mode="acyclic", N=5, K=2, r=3)
    assert not bad["ok"]
    assert expected_weight_cost("acyclic", 5, 2, 3, 1, changed=False) == 0
    assert expected_output_cost("cyclic", 5, 10) == 50
    with pytest.raises(LedgerError):
        expected_weight_cost("centralized", 5, 2, 3, 1, True)
