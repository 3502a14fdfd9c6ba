"""Exception types shared across the stcm package."""


class StcmError(Exception):
    """Base class for all stcm errors."""


# --- chain ---------------------------------------------------------------

class PayloadTooLarge(StcmError):
    pass


class DuplicateSerial(StcmError):
    pass


class NotCovered(StcmError):
    pass


class DecodeError(StcmError):
    pass


# --- contracts -----------------------------------------------------------

class MalformedRule(StcmError):
    pass


class ValidationFailed(StcmError):
    pass


class LicenseExhausted(StcmError):
    pass


class NotCommitted(StcmError):
    pass


class PublicOverflow(StcmError):
    pass


class PrivateOverflow(StcmError):
    pass


# --- accounting ----------------------------------------------------------

class DegeneratePSL(StcmError):
    pass


class UnknownLedger(StcmError):
    pass


# --- consensus -----------------------------------------------------------

class NotOnInterval(StcmError):
    pass


class PSLNotActive(StcmError):
    pass


class NoPrimaryToCover(StcmError):
    pass


class QuorumUnreachable(StcmError):
    pass


class MajorityUnreachable(StcmError):
    pass


class ConsortiumOffline(StcmError):
    pass


# --- consortium ----------------------------------------------------------

class DuplicateLedgerId(StcmError):
    pass


class UnapprovedVersion(StcmError):
    pass


class WrongStage(StcmError):
    pass


class NoGlobalCommit(StcmError):
    pass


class NotRegistered(StcmError):
    pass


# --- simulation ----------------------------------------------------------

class InvalidScenario(StcmError):
    pass


class UnknownTarget(StcmError):
    pass


class InvariantBreach(StcmError):
    """A run violated one of the simulator's self-checked invariants."""
