"""The seventeen single-condition mutations of a valid BID and ACCEPT_BID.

Each entry is (condition, build, expected error class, accepted rules). A
build takes the fixture dict from :func:`fixture` and returns the mutated,
re-signed transaction.
"""
from __future__ import annotations

from decltx.crypto import generate_keypair
from decltx.driver import sign_tx
from decltx.errors import (
    AmountMismatch,
    InsufficientCapabilitiesError,
    InvalidSignature,
    ValidationError,
)
from decltx.model import Asset, Input, Output, OutputRef

from conftest import Chain

outsider = generate_keypair("outsider")


def fixture() -> dict:
    """Committed REQUEST with two escrowed bids, plus a third bid ready to
    submit and the ACCEPT_BID awarding bid 0 (neither committed)."""
    chain = Chain("mut")
    auc = chain.auction(2, tag="mut", caps=("mill", "drill"))
    late = generate_keypair("late-bidder")
    asset = chain.commit(chain.prep("CREATE", {"capabilities": ["mill", "drill"]}, late))
    bid = chain.prep("BID", {"rfq": auc["rfq"].id, "asset": asset.id}, late)
    acc = chain.prep("ACCEPT_BID", {"rfq": auc["rfq"].id, "win_bid": auc["bids"][0].id},
                     auc["req"])
    other = chain.commit(chain.prep("CREATE", {"capabilities": ["mill"], "metadata": {"o": 1}},
                                    late))
    return {"chain": chain, "auc": auc, "bidder": late, "asset": asset, "bid": bid,
            "acc": acc, "other": other}


def _resign(tx, keys, **changes):
    return sign_tx(tx.replace(id=None, **changes), keys)


def _bid(f, **changes):
    return _resign(f["bid"], [f["bidder"]], **changes)


def _acc(f, **changes):
    return _resign(f["acc"], [f["auc"]["req"]], **changes)


def _forge(tx):
    inp = tx.inputs[0]
    sig = list(inp.fulfillment)
    sig[0] = sig[0][:-2] + ("00" if sig[0][-2:] != "00" else "11")
    return tx.replace(inputs=(Input(inp.fulfills, inp.owners_before, tuple(sig)),)
                      + tx.inputs[1:])


def _win_pos(f):
    win = f["auc"]["bids"][0].id
    return [i.fulfills.transaction_id for i in f["acc"].inputs].index(win)


def _swap_output(f, pos, owners):
    outs = list(f["acc"].outputs)
    o = outs[pos]
    outs[pos] = Output(owners, o.amount, o.prev_owners)
    return tuple(outs)


BID_MUTATIONS = [
    ("C_BID.1", lambda f: _bid(f, inputs=()), ValidationError, {"C_BID.1", "schema"}),
    ("C_BID.2", lambda f: _bid(f, refs=()), ValidationError, {"C_BID.2", "schema"}),
    ("C_BID.3", lambda f: _bid(f, refs=(f["other"].id,)), ValidationError, {"C_BID.3"}),
    ("C_BID.4", lambda f: _bid(f, inputs=(Input(None, (f["bidder"].public_key,)),)),
     ValidationError, {"C_BID.4", "schema"}),
    ("C_BID.5", lambda f: _forge(f["bid"]), InvalidSignature, {"C_BID.5"}),
    ("C_BID.6", lambda f: _bid(f, outputs=(Output((f["bidder"].public_key,), 1,
                                                  (f["bidder"].public_key,)),)),
     ValidationError, {"C_BID.6"}),
    ("C_BID.7", lambda f: _bid(f, asset=(Asset(id=f["other"].id),),
                               inputs=(Input(OutputRef(f["other"].id, 0),
                                             (f["bidder"].public_key,)),)),
     InsufficientCapabilitiesError, {"C_BID.7"}),
    ("C_BID.8", lambda f: _bid(f, outputs=(Output((f["chain"].escrow.public_key,), 2,
                                                  (f["bidder"].public_key,)),)),
     AmountMismatch, {"C_BID.8"}),
]

ACCEPT_MUTATIONS = [
    ("C_ACCEPT_BID.1", lambda f: _acc(f, inputs=f["acc"].inputs[:1],
                                      outputs=f["acc"].outputs[:1],
                                      children=f["acc"].children[:1]),
     ValidationError, {"C_ACCEPT_BID.1"}),
    ("C_ACCEPT_BID.2", lambda f: _acc(f, refs=f["acc"].refs + (f["other"].id,)),
     ValidationError, {"C_ACCEPT_BID.2", "schema"}),
    ("C_ACCEPT_BID.3", lambda f: _acc(f, refs=(f["other"].id,)), ValidationError,
     {"C_ACCEPT_BID.3"}),
    ("C_ACCEPT_BID.4", lambda f: _acc(f, children=f["acc"].children[:1]), ValidationError,
     {"C_ACCEPT_BID.4"}),
    ("C_ACCEPT_BID.5", lambda f: _forge(f["acc"]), InvalidSignature, {"C_ACCEPT_BID.5"}),
    ("C_ACCEPT_BID.6", lambda f: _acc(f, children=f["acc"].children[::-1]), ValidationError,
     {"C_ACCEPT_BID.6"}),
    ("C_ACCEPT_BID.7", lambda f: _acc(f, inputs=tuple(
        Input(OutputRef(f["other"].id, 0), i.owners_before) if n == 1 - _win_pos(f) else i
        for n, i in enumerate(f["acc"].inputs))), ValidationError, {"C_ACCEPT_BID.7"}),
    ("C_ACCEPT_BID.8", lambda f: _acc(f, outputs=_swap_output(f, 1 - _win_pos(f),
                                                              (outsider.public_key,))),
     ValidationError, {"C_ACCEPT_BID.8"}),
    ("C_ACCEPT_BID.9", lambda f: _acc(f, outputs=_swap_output(
        f, _win_pos(f), tuple(f["auc"]["bids"][0].outputs[0].prev_owners))),
     ValidationError, {"C_ACCEPT_BID.9"}),
]

ALL_MUTATIONS = BID_MUTATIONS + ACCEPT_MUTATIONS
