"""Scripted auctions and crash-injection runs shared by tests and scripts."""
from __future__ import annotations

from dataclasses import dataclass, field

from .consensus import Cluster, ClusterConfig
from .crypto import KeyPair, generate_keypair
from .driver import Driver, DriverHandle
from .model import Transaction


@dataclass
class Auction:
    requester: KeyPair
    bidders: list[KeyPair]
    creates: list[Transaction]
    request: Transaction
    bids: list[Transaction]


def commit(cluster: Cluster, driver: Driver, tx: Transaction, timeout: float = 30.0
           ) -> DriverHandle:
    h = driver.submit_async(tx, min_height=cluster.any_ledger().height)
    cluster.run_until(lambda: h.done, timeout)
    if h.status != "committed":
        raise RuntimeError(f"{tx.op} {tx.id[:12]} did not commit: {h.error} {h.error_message}")
    return h


def setup_auction(cluster: Cluster, n_bids: int, *, tag: str = "a", amounts=None,
                  capabilities=("cap-a",)) -> Auction:
    """Commit a REQUEST and ``n_bids`` bids, each on its own fresh asset."""
    d = Driver(cluster)
    req = generate_keypair(("requester", tag))
    bidders = [generate_keypair(("bidder", tag, i)) for i in range(n_bids)]
    amounts = list(amounts or [1] * n_bids)
    rfq = d.sign_tx(d.prepare("REQUEST", {"capabilities": list(capabilities)}, req), [req])
    commit(cluster, d, rfq)
    creates, bids = [], []
    for kp, amt in zip(bidders, amounts):
        a = d.sign_tx(d.prepare("CREATE", {"capabilities": list(capabilities), "amount": amt},
                                kp), [kp])
        commit(cluster, d, a)
        b = d.sign_tx(d.prepare("BID", {"rfq": rfq.id, "asset": a.id}, kp), [kp])
        commit(cluster, d, b)
        creates.append(a)
        bids.append(b)
    return Auction(req, bidders, creates, rfq, bids)


def accept_tx(cluster: Cluster, auction: Auction, winner: int) -> Transaction:
    d = Driver(cluster)
    return d.sign_tx(d.prepare("ACCEPT_BID", {"rfq": auction.request.id,
                                              "win_bid": auction.bids[winner].id},
                               auction.requester), [auction.requester])


@dataclass
class CrashOutcome:
    point: str
    n_bids: int
    winner: int
    with_follower: bool
    crashed: list[int]
    accept: Transaction
    auction: Auction
    cluster: Cluster
    parent_status: str
    notes: list[str] = field(default_factory=list)


def run_crash_scenario(point: str, n_bids: int, winner: int, with_follower: bool = False,
                       *, seed: int = 0, nodes: int = 4, outage: float = 3.0,
                       settle: float = 20.0) -> CrashOutcome:
    """Settle one auction while the ACCEPT_BID receiver crashes at ``point``
    (plus, optionally, one follower at the same moment), then restore."""
    cluster = Cluster(ClusterConfig(nodes=nodes, seed=seed))
    auction = setup_auction(cluster, n_bids, tag=f"{point}:{n_bids}:{winner}:{with_follower}")
    acc = accept_tx(cluster, auction, winner)
    d = Driver(cluster)
    cluster.arm_crash(point)
    h = d.submit_async(acc, min_height=cluster.any_ledger().height)

    def dead() -> list[int]:
        return [n.id for n in cluster.nodes if not n.alive]

    def settled() -> bool:
        st = cluster.settlement_status(acc.id)
        return bool(st and st["settled"])

    cluster.run_until(lambda: bool(dead()) or settled(), 30.0)
    crashed = dead()
    notes = []
    if not crashed:
        notes.append("crash point not reached")
    if with_follower and crashed:
        follower = (crashed[0] + 1) % nodes
        cluster.crash_node(follower)
        crashed.append(follower)
    cluster.run_for(outage)
    for n in crashed:
        cluster.restore_node(n)
    cluster.run_until(lambda: h.done, settle)
    if h.status != "committed":
        # the client's retry budget ran out during the outage; resubmit once
        notes.append(f"retriggered after {h.error}")
        h = d.retrigger(acc)
        cluster.run_until(lambda: h.done, settle)
    cluster.run_until(lambda: settled() and cluster.converged(), settle)
    cluster.run_for(1.0)
    return CrashOutcome(point, n_bids, winner, with_follower, crashed, acc, auction, cluster,
                        h.status, notes)
