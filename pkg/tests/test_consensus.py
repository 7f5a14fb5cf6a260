import json

import pytest
from hypothesis import given, settings, strategies as st

from decltx.consensus import CRASH_POINTS, Cluster, ClusterConfig, quorum
from decltx.crypto import generate_keypair
from decltx.driver import Driver
from decltx.errors import ConfigError, SubmitRefused
from decltx.model import Output
from decltx.scenarios import commit, run_crash_scenario, setup_auction

from oracles import OwnershipReplayer

small = settings(max_examples=8, deadline=None)


def create(d, kp, **extra):
    return d.sign_tx(d.prepare("CREATE", {"capabilities": ["c"], **extra}, kp), [kp])


def make(nodes=4, seed=0, **kw):
    return Cluster(ClusterConfig(nodes=nodes, seed=seed, **kw))


def test_quorum_arithmetic():
    assert [quorum(n) for n in (1, 2, 3, 4, 7, 10)] == [1, 2, 3, 3, 5, 7]


def test_pipelining_flag_is_a_no_op(caplog):
    with caplog.at_level("WARNING"):
        cfg = ClusterConfig(pipelining_enabled=True)
    assert cfg.pipelining_enabled and "ignored" in caplog.text


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ClusterConfig(nodes=0)
    cfg = ClusterConfig.from_mapping({"nodes": 7, "round_timeout_ms": 500})
    assert cfg.nodes == 7 and cfg.round_timeout == 0.5
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg.to_dict()))
    assert ClusterConfig.from_file(p) == cfg
    with pytest.raises(ConfigError):
        ClusterConfig.from_mapping({"bogus": 1})


def test_async_create_commits():
    c = make()
    kp = generate_keypair("a")
    h = Driver(c).submit_async(create(Driver(c), kp))
    assert c.run_until(lambda: h.done, 5)
    assert h.status == "committed" and h.committed_height >= 1


def test_invalid_bid_reports_error_name():
    c = make()
    d = Driver(c)
    req, kp = generate_keypair("r"), generate_keypair("b")
    rfq = commit(c, d, d.sign_tx(d.prepare("REQUEST", {"capabilities": ["A", "B"]}, req), [req]))
    a = commit(c, d, d.sign_tx(d.prepare("CREATE", {"capabilities": ["A"]}, kp), [kp]))
    bid = d.sign_tx(d.prepare("BID", {"rfq": rfq.tx_id, "asset": a.tx_id}, kp), [kp])
    h = d.submit_async(bid, min_height=c.any_ledger().height)
    c.run_until(lambda: h.done, 5)
    assert (h.status, h.error) == ("error", "InsufficientCapabilitiesError")


def test_sync_submit_below_quorum_raises():
    c = make()
    c.crash_node(0)
    c.crash_node(1)
    with pytest.raises(SubmitRefused):
        c.submit(create(Driver(c), generate_keypair("x")), mode="sync")


def test_tampering_receiver_is_caught():
    c = make(seed=4)

    def tamper(node_id, tx):
        if tx.op == "CREATE":
            thief = generate_keypair("thief").public_key
            return tx.replace(outputs=(Output((thief,), tx.outputs[0].amount),))
        return None

    c.tamper = tamper
    tx = create(Driver(c), generate_keypair("victim"))
    h = c.submit(tx, mode="async")
    c.run_for(3)
    assert h.status == "error"
    assert not c.is_committed(tx.id)


def test_duplicate_in_mempool_is_idempotent():
    c = make()
    tx = create(Driver(c), generate_keypair("dup"))
    h1 = c.submit(tx, node_id=0)
    h2 = c.submit(tx, node_id=0)
    h3 = c.submit(tx, node_id=2)
    c.run_until(lambda: h1.done and h2.done and h3.done, 5)
    assert {h.status for h in (h1, h2, h3)} == {"committed"}
    assert sum(t.id == tx.id for t in c.any_ledger().iter_txs()) == 1


def test_one_of_four_down_still_commits():
    c = make()
    c.crash_node(2)
    h = Driver(c).submit_async(create(Driver(c), generate_keypair("f1")))
    assert c.run_until(lambda: h.done, 10) and h.status == "committed"


def test_two_of_four_down_halts_then_resumes():
    c = make()
    setup_auction(c, 1, tag="warm")
    c.run_until(c.converged, 5)
    c.crash_node(1)
    c.crash_node(2)
    h0 = c.nodes[0].height
    tx = create(Driver(c), generate_keypair("halt"))
    h = c.submit(tx, mode="async")
    assert h.error == "SubmitRefused"
    c.run_for(6)
    assert c.nodes[0].height == h0 and c.nodes[3].height == h0
    c.restore_node(1)
    d = Driver(c)
    h = d.submit_async(tx)
    assert c.run_until(lambda: h.done, 20) and h.status == "committed"
    c.restore_node(2)
    assert c.run_until(c.converged, 10)


def test_conflicting_spenders_resolve_identically():
    c = make(seed=9)
    d = Driver(c)
    alice, bob, carol = (generate_keypair(n) for n in ("alice", "bob", "carol"))
    a = commit(c, d, create(d, alice, amount=2))
    t1 = d.sign_tx(d.prepare("TRANSFER", {"asset": a.tx_id, "recipients": [
        {"owners": [bob.public_key], "amount": 2}]}, alice), [alice])
    t2 = d.sign_tx(d.prepare("TRANSFER", {"asset": a.tx_id, "recipients": [
        {"owners": [carol.public_key], "amount": 2}]}, alice), [alice])
    h1, h2 = c.submit(t1, node_id=0), c.submit(t2, node_id=3)
    c.run_until(lambda: h1.done and h2.done, 10)
    c.run_until(c.converged, 5)
    winners = [h for h in (h1, h2) if h.status == "committed"]
    assert len(winners) == 1
    loser = t2 if winners[0] is h1 else t1
    for n in c.nodes:
        assert n.ledger.is_committed(winners[0].tx_id)
        assert not n.ledger.is_committed(loser.id)
    assert c.histories_agree()
    blocks = [b.to_dict() for b in c.any_ledger().iter_blocks()]
    held = OwnershipReplayer().replay(blocks).holdings(a.tx_id)
    assert sum(held.values()) == 2 and len(held) == 1


def test_restored_follower_converges():
    c = make(seed=1)
    c.crash_node(3)
    setup_auction(c, 2, tag="f")
    assert c.nodes[3].height < c.nodes[0].height
    c.restore_node(3)
    assert c.run_until(c.converged, 10)
    assert len(set(c.state_digests().values())) == 1


def test_fault_script(tmp_path):
    c = make(seed=2)
    script = tmp_path / "faults.json"
    script.write_text(json.dumps([{"time_ms": 100, "action": "crash", "node": 1},
                                  {"time_ms": 1500, "action": "restore", "node": 1}]))
    c.load_fault_script(script)
    c.run_for(0.5)
    assert not c.nodes[1].alive
    c.run_for(1.5)
    assert c.nodes[1].alive
    with pytest.raises(ValueError):
        c.arm_crash("nowhere")


def _history(cluster):
    return [(h, d) for _t, n, h, d in cluster.commit_log if n == 0]


def _run_script(seed, nodes, events):
    c = make(nodes=nodes, seed=seed)
    d = Driver(c)
    handles = []
    for i, (t, action, node) in enumerate(events):
        c.schedule_fault(t, action, node % nodes)
    for i in range(6):
        kp = generate_keypair(("s", i))
        handles.append(d.submit_async(create(d, kp)))
        c.run_for(0.3)
    c.run_for(4)
    for n in c.nodes:
        if not n.alive:
            c.restore_node(n.id)
    c.run_until(lambda: all(h.done for h in handles) and c.converged(), 30)
    return c, handles


fault_events = st.lists(st.tuples(st.floats(0.0, 2.0), st.sampled_from(["crash", "restore"]),
                                  st.integers(0, 6)), max_size=4)


@given(st.integers(0, 50), st.sampled_from([4, 5, 7]), fault_events)
@small
def test_safety_all_nodes_share_one_history(seed, nodes, events):
    c, _ = _run_script(seed, nodes, events)
    assert c.histories_agree()
    by_height: dict = {}
    for _t, _n, h, dig in c.commit_log:
        assert by_height.setdefault(h, dig) == dig
    assert not c.alerts


@given(st.integers(0, 50), st.sampled_from([4, 7]), st.data())
@small
def test_liveness_below_a_third_faulty(seed, nodes, data):
    f = (nodes - 1) // 3
    down = data.draw(st.lists(st.integers(0, nodes - 1), min_size=f, max_size=f, unique=True))
    c = make(nodes=nodes, seed=seed)
    for n in down:
        c.crash_node(n)
    h = Driver(c).submit_async(create(Driver(c), generate_keypair(("live", seed))))
    assert c.run_until(lambda: h.done, 15)
    assert h.status == "committed"


@given(st.integers(0, 50), st.sampled_from([4, 7]), st.data())
@small
def test_halt_at_a_third_faulty(seed, nodes, data):
    f = nodes - quorum(nodes) + 1
    down = data.draw(st.lists(st.integers(0, nodes - 1), min_size=f, max_size=f, unique=True))
    c = make(nodes=nodes, seed=seed)
    d = Driver(c)
    h = d.submit_async(create(d, generate_keypair(("halt", seed))), timeout=30.0)
    for n in down:
        c.crash_node(n)
    start = {n.id: n.height for n in c.nodes}
    c.run_for(5.0)
    assert {n.id: n.height for n in c.nodes} == start
    for n in down:
        c.restore_node(n)
    assert c.run_until(lambda: h.done, 30) and h.status == "committed"


@given(st.integers(0, 30), fault_events)
@small
def test_deterministic_under_seed(seed, events):
    c1, h1 = _run_script(seed, 4, events)
    c2, h2 = _run_script(seed, 4, events)
    assert _history(c1) == _history(c2)
    assert [h.status for h in h1] == [h.status for h in h2]


@given(st.sampled_from(CRASH_POINTS), st.integers(2, 4), st.booleans(), st.integers(0, 20))
@settings(max_examples=6, deadline=None)
def test_eventual_commit_under_random_crash(point, n_bids, last, seed):
    out = run_crash_scenario(point, n_bids, n_bids - 1 if last else 0, seed=seed)
    c = out.cluster
    assert c.settlement_status(out.accept.id)["settled"]
    assert c.committed_everywhere(out.accept.children)
    assert c.converged() and not c.alerts
