"""Exception hierarchy shared by every evoattack module."""


class EvoAttackError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EvoAttackError, ValueError):
    """Invalid configuration, detected before any query is spent."""


class ContractError(EvoAttackError, RuntimeError):
    """An API was used out of protocol (e.g. two asks without a tell)."""


class NumericError(EvoAttackError, ArithmeticError):
    """Non-finite input or an unrecoverable linear-algebra failure."""


class ModelFormatError(EvoAttackError, ValueError):
    """A weight file does not match the strict schema."""


class DatasetError(EvoAttackError, ValueError):
    """A dataset directory, label file or PPM image is malformed."""


class FixtureError(EvoAttackError, RuntimeError):
    """Fixture generation could not satisfy its construction constraints."""


class OracleError(EvoAttackError, RuntimeError):
    """The black-box classifier failed to answer a query.

    ``query_count`` is filled in by the query ledger when the failure
    happens inside a counted classification.
    """

    query_count = None


class ProtocolError(OracleError):
    """The external oracle violated the line protocol.

    ``stage`` names where it happened: spawn, handshake, request,
    response or shutdown.
    """

    def __init__(self, message, stage):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class OracleSpawnError(ProtocolError):
    def __init__(self, message):
        super().__init__(message, "spawn")


class HandshakeError(ProtocolError):
    def __init__(self, message):
        super().__init__(message, "handshake")


class MalformedResponseError(ProtocolError):
    def __init__(self, message):
        super().__init__(message, "response")


class ResponseIdError(ProtocolError):
    def __init__(self, expected, got):
        super().__init__(f"response id mismatch: expected {expected}, got {got}", "response")
        self.expected = expected
        self.got = got


class OracleExitedError(ProtocolError):
    def __init__(self, message, stage="response", returncode=None):
        super().__init__(message, stage)
        self.returncode = returncode


class BudgetExhausted(EvoAttackError):
    """Raised instead of querying once the ledger has spent its budget."""

    def __init__(self, budget):
        super().__init__(f"query budget of {budget} exhausted")
        self.budget = budget
