"""Durable committed state for one node.

Backed by sqlite (WAL journal). All indexes are written in the same sqlite
transaction as the block, so readers never see a half-committed block.
Passing ``path=None`` keeps the database in memory; the simulator keeps such
ledgers alive across simulated crashes, which is what a disk would do.
"""
from __future__ import annotations

import json
import sqlite3
import threading
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .errors import IntegrityError, LedgerError
from .model import SPENDABLE_OPS, OutputRef, Transaction, canonical_serialize, sha3_hex

GENESIS_DIGEST = "0" * 64

RETURN_STATUSES = ("pending", "enqueued", "committed")
_STATUS_RANK = {s: i for i, s in enumerate(RETURN_STATUSES)}

# metadata paths kept in the exact-match index, per operation
INDEXED_PATHS = {
    "REQUEST": ("metadata", "capabilities"),
    "CREATE": ("asset", "data", "capabilities"),
}

_SCHEMA = """
CREATE TABLE IF NOT EXISTS blocks(
    height INTEGER PRIMARY KEY, digest TEXT NOT NULL, prev_digest TEXT NOT NULL,
    vote_count INTEGER NOT NULL, rejected TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS txs(
    id TEXT PRIMARY KEY, height INTEGER NOT NULL, position INTEGER NOT NULL,
    op TEXT NOT NULL, body TEXT NOT NULL);
CREATE INDEX IF NOT EXISTS txs_by_op ON txs(op, height, position);
CREATE TABLE IF NOT EXISTS spent(
    tx_id TEXT NOT NULL, output_index INTEGER NOT NULL, spender TEXT NOT NULL,
    PRIMARY KEY(tx_id, output_index));
CREATE TABLE IF NOT EXISTS bids(bid_id TEXT PRIMARY KEY, rfq_id TEXT NOT NULL);
CREATE INDEX IF NOT EXISTS bids_by_rfq ON bids(rfq_id);
CREATE TABLE IF NOT EXISTS accepts(rfq_id TEXT PRIMARY KEY, accept_id TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS meta_index(op TEXT, path TEXT, value TEXT, tx_id TEXT);
CREATE INDEX IF NOT EXISTS meta_lookup ON meta_index(op, path, value);
CREATE TABLE IF NOT EXISTS recovery(
    accept_tx_id TEXT PRIMARY KEY, rfq_id TEXT NOT NULL, parent_status TEXT NOT NULL,
    seq INTEGER NOT NULL);
CREATE TABLE IF NOT EXISTS recovery_children(
    accept_tx_id TEXT NOT NULL, child_id TEXT NOT NULL, position INTEGER NOT NULL,
    status TEXT NOT NULL, body TEXT,
    PRIMARY KEY(accept_tx_id, child_id));
CREATE TABLE IF NOT EXISTS received(tx_id TEXT PRIMARY KEY, op TEXT NOT NULL, body TEXT NOT NULL);
"""


@dataclass(frozen=True)
class Block:
    height: int
    prev_block_digest: str
    txs: tuple[Transaction, ...]
    rejected: tuple[tuple[str, str], ...] = ()  # (tx id, error name) dropped at DeliverTx
    vote_count: int = 0

    @property
    def tx_ids(self) -> tuple[str, ...]:
        return tuple(t.id for t in self.txs)

    @property
    def digest(self) -> str:
        header = {
            "height": self.height,
            "prev_block_digest": self.prev_block_digest,
            "tx_ids": list(self.tx_ids),
            "rejected": [list(r) for r in self.rejected],
        }
        return sha3_hex(canonical_serialize(header))

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "digest": self.digest,
            "prev_block_digest": self.prev_block_digest,
            "vote_count": self.vote_count,
            "txs": [t.to_dict() for t in self.txs],
            "rejected": [list(r) for r in self.rejected],
        }


@dataclass
class RecoveryLogEntry:
    accept_tx_id: str
    rfq_id: str
    return_tx_ids: tuple[str, ...]
    statuses: dict[str, str] = field(default_factory=dict)
    parent_status: str = "commit"
    children: tuple[Transaction, ...] = ()

    @property
    def pending(self) -> list[str]:
        return [c for c in self.return_tx_ids if self.statuses.get(c) != "committed"]

    @property
    def settled(self) -> bool:
        return not self.pending


def _json(obj) -> str:
    return canonical_serialize(obj).decode()


def _dig(value, parts: tuple[str, ...]) -> list:
    """Values found at a dotted path; lists fan out over their elements."""
    if not parts:
        return [value]
    head, rest = parts[0], parts[1:]
    if isinstance(value, list):
        if head.isdigit():
            idx = int(head)
            return _dig(value[idx], rest) if idx < len(value) else []
        return [v for item in value for v in _dig(item, parts)]
    if isinstance(value, dict) and head in value:
        return _dig(value[head], rest)
    return []


def _matches(found: list, value) -> bool:
    for f in found:
        if f == value or (isinstance(f, list) and value in f):
            return True
    return False


class Ledger:
    def __init__(self, path: str | None = None):
        self.path = path
        self._lock = threading.RLock()
        self._conn = sqlite3.connect(path or ":memory:", check_same_thread=False,
                                     isolation_level=None)
        if path:
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=FULL")
        self._conn.executescript(_SCHEMA)
        self._cache: dict[str, Transaction] = {}

    def close(self) -> None:
        with self._lock:
            self._conn.close()

    def _q(self, sql: str, args: Iterable = ()) -> list[tuple]:
        with self._lock:
            return self._conn.execute(sql, tuple(args)).fetchall()

    # -- reads -------------------------------------------------------------

    @property
    def height(self) -> int:
        row = self._q("SELECT MAX(height) FROM blocks")[0][0]
        return row or 0

    @property
    def last_digest(self) -> str:
        rows = self._q("SELECT digest FROM blocks ORDER BY height DESC LIMIT 1")
        return rows[0][0] if rows else GENESIS_DIGEST

    def get_tx(self, tx_id: str) -> Transaction | None:
        if tx_id in self._cache:
            return self._cache[tx_id]
        rows = self._q("SELECT body FROM txs WHERE id=?", (tx_id,))
        if not rows:
            return None
        tx = Transaction.from_dict(json.loads(rows[0][0]))
        self._cache[tx_id] = tx
        return tx

    def is_committed(self, tx_id: str) -> bool:
        return tx_id in self._cache or bool(self._q("SELECT 1 FROM txs WHERE id=?", (tx_id,)))

    def tx_height(self, tx_id: str) -> int | None:
        rows = self._q("SELECT height FROM txs WHERE id=?", (tx_id,))
        return rows[0][0] if rows else None

    def spender_of(self, ref: OutputRef) -> str | None:
        rows = self._q("SELECT spender FROM spent WHERE tx_id=? AND output_index=?",
                       (ref.transaction_id, ref.output_index))
        return rows[0][0] if rows else None

    def get_locked_bids(self, rfq_id: str) -> list[Transaction]:
        """Committed BIDs on ``rfq_id`` whose escrow output is still unspent."""
        rows = self._q(
            "SELECT b.bid_id FROM bids b WHERE b.rfq_id=? AND NOT EXISTS "
            "(SELECT 1 FROM spent s WHERE s.tx_id=b.bid_id) ORDER BY b.bid_id",
            (rfq_id,))
        return [self.get_tx(r[0]) for r in rows]

    def get_bids(self, rfq_id: str) -> list[Transaction]:
        rows = self._q("SELECT bid_id FROM bids WHERE rfq_id=? ORDER BY bid_id", (rfq_id,))
        return [self.get_tx(r[0]) for r in rows]

    def get_accept_tx_for_rfq(self, rfq_id: str) -> Transaction | None:
        rows = self._q("SELECT accept_id FROM accepts WHERE rfq_id=?", (rfq_id,))
        return self.get_tx(rows[0][0]) if rows else None

    def get_block(self, height: int) -> Block | None:
        rows = self._q("SELECT prev_digest, vote_count, rejected FROM blocks WHERE height=?",
                       (height,))
        if not rows:
            return None
        prev, votes, rejected = rows[0]
        ids = self._q("SELECT id FROM txs WHERE height=? ORDER BY position", (height,))
        return Block(height, prev, tuple(self.get_tx(i) for (i,) in ids),
                     tuple(tuple(r) for r in json.loads(rejected)), votes)

    def iter_blocks(self, start: int = 1) -> Iterator[Block]:
        for h in range(start, self.height + 1):
            yield self.get_block(h)

    def iter_txs(self, op: str | None = None) -> Iterator[Transaction]:
        sql = "SELECT id FROM txs" + (" WHERE op=?" if op else "") + " ORDER BY height, position"
        for (i,) in self._q(sql, (op,) if op else ()):
            yield self.get_tx(i)

    def tx_count(self) -> int:
        return self._q("SELECT COUNT(*) FROM txs")[0][0]

    def query_by_metadata(self, op: str | None, path: str, value) -> list[str]:
        parts = tuple(path.split("."))
        if op in INDEXED_PATHS and INDEXED_PATHS[op] == parts and isinstance(value, str):
            rows = self._q(
                "SELECT m.tx_id FROM meta_index m JOIN txs t ON t.id=m.tx_id "
                "WHERE m.op=? AND m.path=? AND m.value=? ORDER BY t.height, t.position",
                (op, path, value))
            return [r[0] for r in rows]
        out = []
        for tx in self.iter_txs(op):
            if _matches(_dig(tx.to_dict(), parts), value):
                out.append(tx.id)
        return out

    def open_requests(self, capability: str | None = None) -> list[str]:
        if capability is None:
            ids = [t.id for t in self.iter_txs("REQUEST")]
        else:
            ids = self.query_by_metadata("REQUEST", "metadata.capabilities", capability)
        return [i for i in ids if self.get_accept_tx_for_rfq(i) is None]

    def balances(self) -> dict[tuple[tuple[str, ...], str], int]:
        """Unspent share totals keyed by (owner keys, asset id)."""
        spent = {(a, b) for a, b in self._q("SELECT tx_id, output_index FROM spent")}
        out: dict[tuple[tuple[str, ...], str], int] = {}
        for tx in self.iter_txs():
            if tx.op not in SPENDABLE_OPS:
                continue
            for idx, o in enumerate(tx.outputs):
                if (tx.id, idx) not in spent:
                    key = (tuple(o.owners), tx.asset_id())
                    out[key] = out.get(key, 0) + o.amount
        return out

    def spent_markers(self) -> list[tuple[str, int, str]]:
        return self._q("SELECT tx_id, output_index, spender FROM spent ORDER BY tx_id, output_index")

    def verify_chain(self) -> bool:
        prev = GENESIS_DIGEST
        for block in self.iter_blocks():
            stored = self._q("SELECT digest FROM blocks WHERE height=?", (block.height,))[0][0]
            if block.prev_block_digest != prev or block.digest != stored:
                return False
            prev = stored
        return True

    def state_digest(self) -> str:
        return sha3_hex(f"{self.height}:{self.last_digest}".encode())

    # -- commit ------------------------------------------------------------

    def commit_block(self, block: Block) -> None:
        with self._lock:
            height = self.height
            if block.height <= height:
                stored = self._q("SELECT digest FROM blocks WHERE height=?", (block.height,))
                if stored and stored[0][0] == block.digest:
                    return  # replay of an already committed block
                raise IntegrityError(f"conflicting block at height {block.height}")
            if block.height != height + 1:
                raise IntegrityError(f"height gap: have {height}, got {block.height}")
            if block.prev_block_digest != self.last_digest:
                raise IntegrityError(f"prev digest mismatch at height {block.height}")
            cur = self._conn.cursor()
            try:
                cur.execute("BEGIN IMMEDIATE")
                cur.execute("INSERT INTO blocks VALUES (?,?,?,?,?)",
                            (block.height, block.digest, block.prev_block_digest,
                             block.vote_count, _json([list(r) for r in block.rejected])))
                for pos, tx in enumerate(block.txs):
                    self._index_tx(cur, block.height, pos, tx)
                cur.execute("COMMIT")
            except sqlite3.IntegrityError as exc:
                cur.execute("ROLLBACK")
                raise IntegrityError(f"block {block.height}: {exc}") from exc
            except BaseException:
                cur.execute("ROLLBACK")
                raise
            for tx in block.txs:
                self._cache[tx.id] = tx

    def _index_tx(self, cur, height: int, pos: int, tx: Transaction) -> None:
        cur.execute("INSERT INTO txs VALUES (?,?,?,?,?)",
                    (tx.id, height, pos, tx.op, _json(tx.to_dict())))
        if tx.op != "ACCEPT_BID":
            for ref in tx.spends:
                cur.execute("INSERT INTO spent VALUES (?,?,?)",
                            (ref.transaction_id, ref.output_index, tx.id))
        if tx.op == "BID":
            for rfq in tx.refs:
                cur.execute("INSERT INTO bids VALUES (?,?)", (tx.id, rfq))
                break
        if tx.op == "ACCEPT_BID":
            cur.execute("INSERT INTO accepts VALUES (?,?)", (tx.refs[0], tx.id))
        if tx.op in INDEXED_PATHS:
            parts = INDEXED_PATHS[tx.op]
            for found in _dig(tx.to_dict(), parts):
                for v in (found if isinstance(found, list) else [found]):
                    if isinstance(v, str):
                        cur.execute("INSERT INTO meta_index VALUES (?,?,?,?)",
                                    (tx.op, ".".join(parts), v, tx.id))

    # -- nested-transaction recovery collection ----------------------------

    def log_accept_recovery(self, entry: RecoveryLogEntry) -> None:
        with self._lock:
            if not self.is_committed(entry.accept_tx_id):
                raise LedgerError(f"ACCEPT_BID {entry.accept_tx_id} is not committed")
            if self._q("SELECT 1 FROM recovery WHERE accept_tx_id=?", (entry.accept_tx_id,)):
                return
            bodies = {c.id: c for c in entry.children}
            seq = self._q("SELECT COUNT(*) FROM recovery")[0][0]
            cur = self._conn.cursor()
            cur.execute("BEGIN IMMEDIATE")
            cur.execute("INSERT INTO recovery VALUES (?,?,?,?)",
                        (entry.accept_tx_id, entry.rfq_id, entry.parent_status, seq))
            for pos, cid in enumerate(entry.return_tx_ids):
                body = bodies.get(cid)
                cur.execute("INSERT INTO recovery_children VALUES (?,?,?,?,?)",
                            (entry.accept_tx_id, cid, pos, entry.statuses.get(cid, "pending"),
                             _json(body.to_dict()) if body else None))
            cur.execute("COMMIT")

    def update_return_status(self, accept_tx_id: str, return_tx_id: str, status: str) -> None:
        if status not in _STATUS_RANK:
            raise LedgerError(f"unknown status {status!r}")
        with self._lock:
            rows = self._q("SELECT status FROM recovery_children WHERE accept_tx_id=? "
                           "AND child_id=?", (accept_tx_id, return_tx_id))
            if not rows:
                raise LedgerError(f"no recovery entry for {accept_tx_id}/{return_tx_id}")
            current = rows[0][0]
            if _STATUS_RANK[status] < _STATUS_RANK[current]:
                raise LedgerError(f"status of {return_tx_id} cannot move {current} -> {status}")
            if status != current:
                self._q("UPDATE recovery_children SET status=? WHERE accept_tx_id=? "
                        "AND child_id=?", (status, accept_tx_id, return_tx_id))

    def get_recovery(self, accept_tx_id: str) -> RecoveryLogEntry | None:
        rows = self._q("SELECT rfq_id, parent_status FROM recovery WHERE accept_tx_id=?",
                       (accept_tx_id,))
        if not rows:
            return None
        rfq_id, parent_status = rows[0]
        kids = self._q("SELECT child_id, status, body FROM recovery_children "
                       "WHERE accept_tx_id=? ORDER BY position", (accept_tx_id,))
        return RecoveryLogEntry(
            accept_tx_id=accept_tx_id,
            rfq_id=rfq_id,
            return_tx_ids=tuple(k[0] for k in kids),
            statuses={k[0]: k[1] for k in kids},
            parent_status=parent_status,
            children=tuple(Transaction.from_dict(json.loads(k[2])) for k in kids if k[2]),
        )

    def load_pending_recovery(self) -> list[RecoveryLogEntry]:
        rows = self._q("SELECT DISTINCT r.accept_tx_id, r.seq FROM recovery r "
                       "JOIN recovery_children c ON c.accept_tx_id=r.accept_tx_id "
                       "WHERE c.status != 'committed' ORDER BY r.seq")
        return [self.get_recovery(r[0]) for r in rows]

    def all_recovery(self) -> list[RecoveryLogEntry]:
        rows = self._q("SELECT accept_tx_id FROM recovery ORDER BY seq")
        return [self.get_recovery(r[0]) for r in rows]

    # -- receiver log --------------------------------------------------------

    def log_received(self, tx: Transaction) -> None:
        self._q("INSERT OR IGNORE INTO received VALUES (?,?,?)",
                (tx.id, tx.op, _json(tx.to_dict())))

    def is_received(self, tx_id: str) -> bool:
        return bool(self._q("SELECT 1 FROM received WHERE tx_id=?", (tx_id,)))

    def received_ids(self, op: str | None = None) -> list[str]:
        if op:
            return [r[0] for r in self._q("SELECT tx_id FROM received WHERE op=?", (op,))]
        return [r[0] for r in self._q("SELECT tx_id FROM received")]

    # -- export ----------------------------------------------------------------

    def export(self, fp: IO[str]) -> int:
        """Write one canonical JSON record per block; returns the block count."""
        n = 0
        for block in self.iter_blocks():
            fp.write(_json(block.to_dict()) + "\n")
            n += 1
        return n
