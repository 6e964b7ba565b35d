"""Exception hierarchy.

Every library error derives from :class:`ReachStoreError`. The two
intermediate bases, :class:`UserError` and :class:`SystemError_`, decide
the CLI exit code (1 and 2 respectively).
"""

from __future__ import annotations


class ReachStoreError(Exception):
    """Base class for all reachstore errors."""


class UserError(ReachStoreError):
    """Caller supplied something invalid (bad schema, bad filter, ...)."""


class SystemError_(ReachStoreError):
    """Storage or environment failure."""


# metamodel
class DuplicateClass(UserError):
    pass


class UnknownSuperclass(UserError):
    pass


class DuplicateField(UserError):
    pass


class UnknownField(UserError):
    pass


class RegistryFrozen(UserError):
    pass


class MalformedXml(UserError):
    pass


class UnknownElement(UserError):
    pass


class MissingNameAttribute(UserError):
    pass


class UnknownKind(UserError):
    pass


class ValueKindError(UserError):
    """A value does not match the kind of the field it is assigned to."""


# lifecycle / manager
class IllegalTransition(UserError):
    def __init__(self, state, event):
        super().__init__(f"illegal transition: {state.name} + {event.name}")
        self.state = state
        self.event = event


class TransactionStateError(UserError):
    pass


class UnregisteredClass(UserError):
    pass


class NoSuchObject(UserError):
    pass


# store
class StoreUnavailable(SystemError_):
    pass


class IncompatibleSchema(SystemError_):
    pass


class StoreIOError(SystemError_):
    pass


# query
class FilterSyntaxError(UserError):
    def __init__(self, position: int, expected, found: str = ""):
        self.position = position
        self.expected = frozenset(expected)
        self.found = found
        exp = ", ".join(sorted(self.expected))
        super().__init__(f"syntax error at {position}: expected one of {{{exp}}}, found {found!r}")


class TypeMismatch(UserError):
    pass


class EvalError(UserError):
    pass


class Unsupported(UserError):
    pass


class SqlError(SystemError_):
    """Raised by the bundled relational engine for invalid statements."""


# indicium
class DuplicateAttribute(UserError):
    pass


class CollectionExists(UserError):
    pass


class IncompatibleSignature(UserError):
    pass


class SignatureMismatch(UserError):
    pass


class NoSuchCollection(SignatureMismatch):
    pass


# proxies
class DuplicateMapper(UserError):
    pass


class NoMapper(UserError):
    pass


class MalformedCatalog(UserError):
    pass


class DuplicateStoreName(UserError):
    pass


class UnknownStore(UserError):
    pass


# flow
class UnknownType(UserError):
    pass


class DuplicateName(UserError):
    pass


class ValidationError(UserError):
    pass


class DuplicateDelivery(UserError):
    pass


class ConfigError(UserError):
    pass
