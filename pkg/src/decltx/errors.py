"""Exception vocabulary.

Class names double as the wire-visible error identifiers, so handles and
block records carry ``type(err).__name__`` verbatim.
"""


class DeclTxError(Exception):
    pass


class ValidationError(DeclTxError):
    """A transaction failed a structural or semantic rule.

    ``rule`` names the violated condition (e.g. ``"C_BID.6"``) so callers and
    tests can tell which check fired without parsing messages.
    """

    def __init__(self, message: str = "", rule: str | None = None):
        super().__init__(message)
        self.rule = rule

    @property
    def name(self) -> str:
        return type(self).__name__


class SchemaValidationError(ValidationError):
    def __init__(self, violations):
        self.violations = list(violations)
        msg = "; ".join(f"{v.field}: {v.rule}" for v in self.violations)
        super().__init__(msg, rule="schema")


class InputDoesNotExistError(ValidationError):
    pass


class DoubleSpendError(ValidationError):
    pass


class InvalidSignature(ValidationError):
    pass


class AmountMismatch(ValidationError):
    pass


class InsufficientCapabilitiesError(ValidationError):
    pass


class MissingCapabilities(ValidationError):
    pass


class DuplicateTransactionError(ValidationError):
    pass


class InvalidWorkflowHead(ValidationError):
    pass


class UncommittedDependency(ValidationError):
    pass


class InvalidOpSequence(ValidationError):
    pass


class SchemaNotFound(DeclTxError, KeyError):
    pass


class SerializationError(DeclTxError, TypeError):
    pass


class IntegrityError(DeclTxError):
    """Fatal ledger inconsistency (chain break or conflicting spend)."""


class LedgerError(DeclTxError):
    pass


class RecoveryInconsistency(DeclTxError):
    pass


class SubmitRefused(DeclTxError):
    pass


class TransportError(DeclTxError):
    pass


class Unresolved(DeclTxError):
    pass


class PrepareError(DeclTxError):
    pass


class SignError(DeclTxError):
    pass


class ConfigError(DeclTxError, ValueError):
    pass


# errors a client may retry against another node
TRANSIENT_ERRORS = ("SubmitRefused", "TransportError", "Timeout")
