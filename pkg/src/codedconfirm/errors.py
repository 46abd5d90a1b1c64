"""Exception types shared across the package."""


class CodedConfirmError(Exception):
    """Base class for all package-specific errors."""


class DivisionByZero(CodedConfirmError):
    """Multiplicative inverse of zero requested."""


class DuplicatePoint(CodedConfirmError):
    """Interpolation or decoding was given repeated x-coordinates."""


class ShapeMismatch(CodedConfirmError):
    """Block parts passed to the encoder have inconsistent lengths."""


class DecodeFailure(CodedConfirmError):
    """No polynomial within the error budget explains the received values.

    Reaching this during a simulated round is a protocol signal (the
    adversary exceeded its corruption budget or the leader was inconsistent),
    not a programming error.
    """


class UnknownSigner(CodedConfirmError):
    """Signing or verification referenced a node id outside the registry."""


class InsufficientShares(CodedConfirmError):
    """Fewer than t+1 distinct valid partial signatures were supplied."""


class MessageMismatch(CodedConfirmError):
    """Partial signatures over different messages were mixed in one combine."""


class EmptyInput(CodedConfirmError):
    """An operation that needs at least one element got an empty vector."""


class IndexOutOfRange(CodedConfirmError):
    """Vector-commitment index outside [1, committed length]."""


class MalformedTransaction(CodedConfirmError):
    """A field-element vector does not decode to a valid transaction."""


class EmptyBlock(CodedConfirmError):
    """Partitioning was asked to split a block with no transactions."""


class DuplicateInstance(CodedConfirmError):
    """A Byzantine-broadcast instance id was reused."""


class InvalidConfig(CodedConfirmError):
    """Round or experiment configuration violates a protocol invariant."""


class HarnessViolation(CodedConfirmError):
    """The test harness itself broke a simulation ground rule (e.g. tried
    to corrupt more than f nodes). Always a bug in the caller, never a
    protocol event."""


class AccountingGap(CodedConfirmError):
    """A trace envelope could not be attributed to a protocol step."""


class InsufficientPoints(CodedConfirmError):
    """Too few sweep points to fit the complexity model."""
