"""Declarative blockchain transactions with escrow auctions and nested settlement."""
from .consensus import Cluster, ClusterConfig
from .crypto import KeyPair, generate_keypair
from .driver import Driver, prepare, sign_tx
from .ledger import Block, Ledger
from .model import Asset, Input, Operation, Output, OutputRef, Transaction
from .validation import ValidationContext, validate_transaction

__version__ = "0.1.0"

__all__ = [
    "Asset", "Block", "Cluster", "ClusterConfig", "Driver", "Input", "KeyPair", "Ledger",
    "Operation", "Output", "OutputRef", "Transaction", "ValidationContext",
    "generate_keypair", "prepare", "sign_tx", "validate_transaction",
]
