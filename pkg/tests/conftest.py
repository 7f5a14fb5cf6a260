"""Shared fixtures: a single-node in-memory chain for fast validation tests."""
from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from decltx.crypto import generate_keypair
from decltx.driver import prepare, sign_tx
from decltx.ledger import Block, Ledger
from decltx.nested import derive_children
from decltx.validation import ValidationContext, validate_transaction

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


class Chain:
    """A ledger plus the escrow key, committing one validated tx per block."""

    def __init__(self, seed="chain"):
        self.ledger = Ledger()
        self.escrow = generate_keypair(("escrow", seed))

    @property
    def ctx(self) -> ValidationContext:
        return ValidationContext(self.ledger, self.escrow.public_key)

    def validate(self, tx):
        return validate_transaction(tx, self.ctx)

    def commit_raw(self, *txs):
        lg = self.ledger
        lg.commit_block(Block(lg.height + 1, lg.last_digest, tuple(txs)))

    def commit(self, *txs):
        ctx = self.ctx
        for tx in txs:
            validate_transaction(tx, ctx)
            ctx = ctx.with_block(list(ctx.current_block_txs) + [tx])
        self.commit_raw(*txs)
        return txs[-1] if len(txs) == 1 else txs

    def prep(self, op, payload, kp, **kw):
        return sign_tx(prepare(op, payload, kp, reader=self.ledger,
                               escrow_public_key=self.escrow.public_key, **kw), [kp])

    def children(self, accept):
        return [sign_tx(c, [self.escrow]) for c in
                derive_children(accept, self.ledger.get_tx, self.escrow.public_key)]

    def auction(self, n_bids=2, tag="t", amounts=None, caps=("mill",), asset_caps=None):
        req = generate_keypair(("req", tag))
        bidders = [generate_keypair(("bidder", tag, i)) for i in range(n_bids)]
        amounts = amounts or [1] * n_bids
        rfq = self.commit(self.prep("REQUEST", {"capabilities": list(caps)}, req))
        creates, bids = [], []
        for kp, amt in zip(bidders, amounts):
            a = self.commit(self.prep("CREATE", {"capabilities": list(asset_caps or caps),
                                                 "amount": amt}, kp))
            b = self.commit(self.prep("BID", {"rfq": rfq.id, "asset": a.id}, kp))
            creates.append(a)
            bids.append(b)
        return {"req": req, "bidders": bidders, "rfq": rfq, "creates": creates, "bids": bids}

    def settle(self, auc, winner=0):
        acc = self.commit(self.prep("ACCEPT_BID", {"rfq": auc["rfq"].id,
                                                   "win_bid": auc["bids"][winner].id},
                                    auc["req"]))
        for c in self.children(acc):
            self.commit(c)
        return acc


@pytest.fixture
def chain():
    c = Chain()
    yield c
    c.ledger.close()
