import pytest
from hypothesis import given, settings, strategies as st

from decltx.consensus import Cluster, ClusterConfig
from decltx.crypto import generate_keypair
from decltx.driver import Driver, load_template, prepare, sign_tx
from decltx.errors import PrepareError, SignError
from decltx.model import OPERATIONS, compute_tx_id
from decltx.schema import validate_schema
from decltx.scenarios import accept_tx, commit, setup_auction
from decltx.validation import validate_transaction

from conftest import Chain

kp = generate_keypair("drv")


def test_templates_exist_for_client_ops():
    for op in OPERATIONS:
        if op == "RETURN":
            with pytest.raises(PrepareError):
                load_template(op)
            continue
        t = load_template(op)
        assert t.operation == op and t.description


def test_bid_goes_to_escrow(chain):
    auc = chain.auction(1)
    bidder = generate_keypair("late")
    a = chain.commit(chain.prep("CREATE", {"capabilities": ["mill"]}, bidder))
    bid = chain.prep("BID", {"rfq": auc["rfq"].id, "asset": a.id}, bidder)
    assert [o.owners for o in bid.outputs] == [(chain.escrow.public_key,)]
    assert bid.outputs[0].prev_owners == (bidder.public_key,)
    chain.validate(bid)


def test_create_capabilities_in_asset_data():
    tx = prepare("CREATE", {"capabilities": ["weld", "cut"]}, kp)
    assert tx.asset[0].data["capabilities"] == ["weld", "cut"]


@pytest.mark.parametrize("op,payload", [
    ("BID", {"asset": "a" * 64}),
    ("REQUEST", {}),
    ("TRANSFER", {"asset": "a" * 64}),
    ("ACCEPT_BID", {"rfq": "a" * 64}),
    ("CREATE", {"colour": "red"}),
    ("RETURN", {}),
    ("MINT", {}),
])
def test_prepare_rejects_bad_payloads(chain, op, payload):
    with pytest.raises(PrepareError):
        prepare(op, payload, kp, reader=chain.ledger,
                escrow_public_key=chain.escrow.public_key)


def test_prepare_needs_reader_for_spends():
    with pytest.raises(PrepareError):
        prepare("TRANSFER", {"asset": "a" * 64, "recipients": []}, kp)


def test_sign_errors():
    tx = prepare("CREATE", {}, kp)
    with pytest.raises(SignError):
        sign_tx(tx, [generate_keypair("other")])
    with pytest.raises(SignError):
        sign_tx(tx.replace(metadata={"late": 1}), [kp])


def test_sign_is_deterministic():
    tx = prepare("CREATE", {"metadata": {"n": 1}}, kp)
    assert sign_tx(tx, [kp]) == sign_tx(tx, [kp])


def test_transfer_with_change(chain):
    c = chain.commit(chain.prep("CREATE", {"amount": 5}, kp))
    bob = generate_keypair("bob")
    t = chain.prep("TRANSFER", {"asset": c.id, "recipients": [
        {"owners": [bob.public_key], "amount": 2}]}, kp)
    assert [(o.owners, o.amount) for o in t.outputs] == [((bob.public_key,), 2),
                                                          ((kp.public_key,), 3)]
    chain.validate(t)
    with pytest.raises(PrepareError):
        chain.prep("TRANSFER", {"asset": c.id, "recipients": [
            {"owners": [bob.public_key], "amount": 6}]}, kp)


caps = st.lists(st.sampled_from(["mill", "drill", "lathe", "weld"]), min_size=1, max_size=3,
                unique=True)
meta = st.none() | st.dictionaries(st.sampled_from(["lot", "note", "grade"]),
                                   st.text(max_size=8) | st.integers(0, 99), max_size=2)


@given(caps, st.integers(1, 3), st.integers(1, 50), meta, st.data())
@settings(max_examples=25)
def test_prepare_then_sign_is_valid(rcaps, n_bids, amount, metadata, data):
    """Every driver-built transaction passes the schema and full validation."""
    chain = Chain("ps")
    req = generate_keypair("ps-req")
    rfq = chain.prep("REQUEST", {"capabilities": rcaps, "metadata": metadata}, req)
    assert validate_schema(None, rfq) == []
    chain.commit(rfq)
    bids = []
    for i in range(n_bids):
        b = generate_keypair(("ps-b", i))
        a = chain.prep("CREATE", {"capabilities": rcaps, "amount": amount,
                                  "metadata": metadata}, b)
        assert validate_schema(None, a) == []
        chain.commit(a)
        bid = chain.prep("BID", {"rfq": rfq.id, "asset": a.id, "metadata": metadata}, b)
        assert validate_schema(None, bid) == []
        bids.append(chain.commit(bid))
    win = data.draw(st.sampled_from(bids))
    acc = chain.prep("ACCEPT_BID", {"rfq": rfq.id, "win_bid": win.id}, req)
    assert validate_schema(None, acc) == []
    chain.commit(acc)
    for child in chain.children(acc):
        assert validate_schema(None, child) == []
        validate_transaction(child, chain.ctx)


# -- submission ------------------------------------------------------------------

@pytest.fixture
def cluster():
    c = Cluster(ClusterConfig(nodes=4, seed=6))
    yield c
    c.close()


def test_submit_sync_receipt(cluster):
    d = Driver(cluster, kp)
    r = d.submit_sync(d.sign_tx(d.prepare("CREATE", {})))
    assert r.accepted and r.error is None
    bad = d.prepare("CREATE", {"metadata": {"v": 1}})  # unsigned
    r = d.submit_sync(bad)
    assert not r.accepted and r.error == "InvalidSignature"


def test_callback_fires_once(cluster):
    d = Driver(cluster, kp)
    fired = []
    h = d.submit_async(d.sign_tx(d.prepare("CREATE", {"metadata": {"cb": 1}})),
                       callback=fired.append)
    cluster.run_for(5)
    assert fired == [h] and h.status == "committed"


def test_unresolved_after_retry_budget(cluster):
    d = Driver(cluster, kp, retries=2, timeout=0.5)
    for n in (0, 1):
        cluster.crash_node(n)
    h = d.submit_async(d.sign_tx(d.prepare("CREATE", {"metadata": {"u": 1}})))
    cluster.run_until(lambda: h.done, 10)
    assert (h.status, h.error) == ("error", "Unresolved")
    assert len(h.attempts) == 3


def test_retrigger_keeps_the_id(cluster):
    auc = setup_auction(cluster, 2, tag="rt")
    acc = accept_tx(cluster, auc, 0)
    d = Driver(cluster)
    first = commit(cluster, d, acc)
    again = d.retrigger(first)
    cluster.run_until(lambda: again.done, 5)
    assert again.tx_id == first.tx_id == compute_tx_id(acc)
    assert again.status == "committed"
    ids = [t.id for t in cluster.any_ledger().iter_txs()]
    assert len(ids) == len(set(ids))


@given(st.integers(0, 3), st.integers(1, 3))
@settings(max_examples=8, deadline=None)
def test_retrigger_never_duplicates(crash_node, rounds):
    c = Cluster(ClusterConfig(nodes=4, seed=crash_node))
    auc = setup_auction(c, 2, tag=("rtp", crash_node))
    acc = accept_tx(c, auc, 1)
    d = Driver(c, timeout=0.3, retries=1)
    h = d.submit_async(acc, min_height=c.any_ledger().height)
    c.crash_node(crash_node)
    for _ in range(rounds):
        h = d.retrigger(h)
    c.run_for(3)
    c.restore_node(crash_node)
    c.run_until(c.converged, 10)
    if not c.is_committed(acc.id):
        h = d.retrigger(h)
        c.run_until(lambda: h.done, 10)
    c.run_until(lambda: c.settlement_status(acc.id) and c.settlement_status(acc.id)["settled"]
                and c.converged(), 15)
    ids = [t.id for t in c.any_ledger().iter_txs()]
    assert len(ids) == len(set(ids))
    assert sum(t.op == "ACCEPT_BID" for t in c.any_ledger().iter_txs()) == 1
    assert c.committed_everywhere(acc.children)
