import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from decltx.errors import IntegrityError, LedgerError
from decltx.ledger import GENESIS_DIGEST, RETURN_STATUSES, Block, Ledger, RecoveryLogEntry
from decltx.nested import derive_children

from conftest import Chain
from oracles import OwnershipReplayer, open_requests_scan


def blocks(chain):
    return [b.to_dict() for b in chain.ledger.iter_blocks()]


def test_get_tx_committed_only(chain):
    auc = chain.auction(1)
    lg = chain.ledger
    assert lg.get_tx(auc["rfq"].id) == auc["rfq"]
    pending = chain.prep("REQUEST", {"capabilities": ["other"]}, auc["req"])
    assert lg.get_tx(pending.id) is None
    assert lg.get_tx("f" * 64) is None


def test_locked_bids_lifecycle(chain):
    auc = chain.auction(3)
    rfq = auc["rfq"].id
    assert len(chain.ledger.get_locked_bids(rfq)) == 3
    other = chain.auction(2, tag="other")
    assert {b.id for b in chain.ledger.get_locked_bids(rfq)} == {b.id for b in auc["bids"]}
    chain.settle(auc, 1)
    assert chain.ledger.get_locked_bids(rfq) == []
    assert len(chain.ledger.get_locked_bids(other["rfq"].id)) == 2
    # replay oracle: no escrow holdings remain for the settled auction's assets
    held = OwnershipReplayer().replay(blocks(chain)).balances()
    for c in auc["creates"]:
        assert ((chain.escrow.public_key,), c.id) not in held


def test_commit_block_rules(chain):
    auc = chain.auction(1)
    lg = chain.ledger
    h = lg.height
    top = lg.get_block(h)
    lg.commit_block(top)  # identical replay is a no-op
    assert lg.height == h
    with pytest.raises(IntegrityError):
        lg.commit_block(Block(h, top.prev_block_digest, ()))
    with pytest.raises(IntegrityError):
        lg.commit_block(Block(h + 2, lg.last_digest, ()))
    with pytest.raises(IntegrityError):
        lg.commit_block(Block(h + 1, GENESIS_DIGEST, ()))
    # a second spender of an already spent output conflicts with its marker
    bid = auc["bids"][0]
    clash = bid.replace(metadata={"x": 1}, id="e" * 64)
    with pytest.raises(IntegrityError):
        lg.commit_block(Block(h + 1, lg.last_digest, (clash,)))
    assert lg.height == h and lg.verify_chain()


def test_crash_replay_is_idempotent(tmp_path):
    path = str(tmp_path / "n.sqlite")
    chain = Chain()
    chain.ledger = Ledger(path)
    chain.auction(2)
    saved = list(chain.ledger.iter_blocks())
    chain.ledger.close()
    reopened = Ledger(path)
    for b in saved:
        reopened.commit_block(b)
    assert reopened.height == len(saved) and reopened.verify_chain()
    assert [b.digest for b in reopened.iter_blocks()] == [b.digest for b in saved]
    reopened.close()


def test_recovery_log_statuses(chain):
    auc = chain.auction(3)
    acc = chain.commit(chain.prep("ACCEPT_BID", {"rfq": auc["rfq"].id,
                                                 "win_bid": auc["bids"][0].id}, auc["req"]))
    kids = derive_children(acc, chain.ledger.get_tx, chain.escrow.public_key)
    lg = chain.ledger
    lg.log_accept_recovery(RecoveryLogEntry(acc.id, auc["rfq"].id,
                                            tuple(k.id for k in kids), children=tuple(kids)))
    entry = lg.get_recovery(acc.id)
    assert entry.pending == [k.id for k in kids] and len(entry.children) == 3
    lg.update_return_status(acc.id, kids[0].id, "committed")
    assert [e.accept_tx_id for e in lg.load_pending_recovery()] == [acc.id]
    assert len(lg.get_recovery(acc.id).pending) == 2
    for k in kids[1:]:
        lg.update_return_status(acc.id, k.id, "committed")
    assert lg.load_pending_recovery() == []
    with pytest.raises(LedgerError):
        lg.update_return_status(acc.id, kids[0].id, "pending")
    with pytest.raises(LedgerError):
        lg.update_return_status(acc.id, "0" * 64, "committed")


def test_recovery_needs_committed_parent(chain):
    with pytest.raises(LedgerError):
        chain.ledger.log_accept_recovery(RecoveryLogEntry("a" * 64, "b" * 64, ("c" * 64,)))


def test_two_settlements_two_entries(chain):
    a1, a2 = chain.auction(2, tag="x"), chain.auction(2, tag="y")
    accs = [chain.prep("ACCEPT_BID", {"rfq": a["rfq"].id, "win_bid": a["bids"][0].id},
                       a["req"]) for a in (a1, a2)]
    chain.commit(*accs)
    for acc, a in zip(accs, (a1, a2)):
        kids = derive_children(acc, chain.ledger.get_tx, chain.escrow.public_key)
        chain.ledger.log_accept_recovery(RecoveryLogEntry(acc.id, a["rfq"].id,
                                                          tuple(k.id for k in kids)))
    assert [e.rfq_id for e in chain.ledger.all_recovery()] == [a1["rfq"].id, a2["rfq"].id]


@given(st.lists(st.tuples(st.integers(0, 2), st.sampled_from(RETURN_STATUSES)), max_size=12))
@settings(max_examples=40)
def test_recovery_status_monotone(updates):
    lg = Ledger()
    from decltx.model import Asset, Input, Output, Transaction, with_id
    parent = with_id(Transaction("REQUEST", (Asset(data={}),), (Input(None, ("K",)),),
                                 (Output(("K",), 1),), metadata={"capabilities": ["c"]}))
    lg.commit_block(Block(1, GENESIS_DIGEST, (parent,)))
    kids = tuple(f"{i:064x}" for i in range(3))
    lg.log_accept_recovery(RecoveryLogEntry(parent.id, "r" * 64, kids))
    rank = {s: i for i, s in enumerate(RETURN_STATUSES)}
    model = {k: 0 for k in kids}
    for idx, status in updates:
        k = kids[idx]
        if rank[status] < model[k]:
            with pytest.raises(LedgerError):
                lg.update_return_status(parent.id, k, status)
        else:
            lg.update_return_status(parent.id, k, status)
            model[k] = rank[status]
        got = lg.get_recovery(parent.id).statuses
        assert {c: rank[s] for c, s in got.items()} == model
    lg.close()


def test_metadata_query_and_open_view(chain):
    a = chain.auction(1, tag="p", caps=("3d-print",))
    b = chain.auction(1, tag="q", caps=("3d-print", "mill"))
    c = chain.auction(1, tag="r", caps=("mill",))
    lg = chain.ledger
    assert lg.open_requests("3d-print") == open_requests_scan(blocks(chain), "3d-print")
    assert lg.open_requests("3d-print") == [a["rfq"].id, b["rfq"].id]
    assert lg.open_requests("laser") == []
    chain.settle(a)
    assert lg.open_requests("3d-print") == [b["rfq"].id]
    assert lg.open_requests() == open_requests_scan(blocks(chain))
    assert lg.query_by_metadata("CREATE", "asset.data.capabilities", "mill") == \
        [b["creates"][0].id, c["creates"][0].id]
    # unindexed path falls back to a scan
    assert lg.query_by_metadata("REQUEST", "asset.data", {}) == \
        [x["rfq"].id for x in (a, b, c)]


@given(st.lists(st.tuples(st.sampled_from(["A", "B", "C", "D"]), st.booleans()),
                min_size=1, max_size=6))
@settings(max_examples=20)
def test_open_requests_match_scan(plan):
    chain = Chain("scan")
    auctions = []
    for i, (cap, settle) in enumerate(plan):
        auc = chain.auction(1, tag=i, caps=(cap,))
        auctions.append((auc, settle))
    for auc, settle in auctions:
        if settle:
            chain.settle(auc)
    for cap in ["A", "B", "C", "D", None]:
        assert chain.ledger.open_requests(cap) == open_requests_scan(blocks(chain), cap)


def _audit(lg):
    """Append-only chain, every spent output marked exactly once."""
    assert lg.verify_chain()
    markers = lg.spent_markers()
    assert len({(a, b) for a, b, _ in markers}) == len(markers)
    spends = [(r.transaction_id, r.output_index) for t in lg.iter_txs()
              if t.op != "ACCEPT_BID" for r in t.spends]
    assert sorted(spends) == sorted((a, b) for a, b, _ in markers)


@given(st.lists(st.integers(1, 3), min_size=1, max_size=3), st.data())
@settings(max_examples=15)
def test_ledger_audits_after_random_auctions(sizes, data):
    chain = Chain("audit")
    history = []
    for i, n in enumerate(sizes):
        auc = chain.auction(n, tag=i)
        if data.draw(st.booleans()):
            chain.settle(auc, data.draw(st.integers(0, n - 1)))
        _audit(chain.ledger)
        snapshot = [b.digest for b in chain.ledger.iter_blocks()]
        assert snapshot[:len(history)] == history  # append-only
        history = snapshot
    assert chain.ledger.balances() == OwnershipReplayer().replay(blocks(chain)).balances()


def test_export_is_canonical(chain):
    chain.auction(1)
    buf = io.StringIO()
    n = chain.ledger.export(buf)
    lines = buf.getvalue().splitlines()
    assert n == len(lines) == chain.ledger.height
    first = json.loads(lines[0])
    assert first["prev_block_digest"] == GENESIS_DIGEST and first["height"] == 1


def test_received_log(chain):
    auc = chain.auction(1)
    chain.ledger.log_received(auc["rfq"])
    chain.ledger.log_received(auc["rfq"])
    assert chain.ledger.is_received(auc["rfq"].id)
    assert chain.ledger.received_ids("REQUEST") == [auc["rfq"].id]
