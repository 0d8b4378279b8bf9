"""Exception hierarchy shared by every layer of the package."""


class RobotLedgerError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(RobotLedgerError, ValueError):
    """Malformed input: bad names, non-finite numbers, invalid scenarios."""


class AuthenticationError(RobotLedgerError):
    """A certificate could not be verified against any known CA."""


class ContractError(RobotLedgerError):
    """Raised from inside contract functions; rejects the transaction."""


class AuthorizationError(ContractError):
    pass


class NotFoundError(ContractError):
    pass


class ConflictError(ContractError):
    pass


class StateError(ContractError):
    pass
