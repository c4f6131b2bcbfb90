"""Exception hierarchy shared by every evpay module."""


class EvpayError(Exception):
    pass


# ledger
class LedgerError(EvpayError):
    pass


class InvalidTransaction(LedgerError):
    pass


class DuplicateAddress(LedgerError):
    pass


class NegativeAmount(LedgerError):
    pass


class DifficultyTooHigh(LedgerError):
    pass


class BadPoW(LedgerError):
    pass


class BadSignature(LedgerError):
    pass


class UnknownReference(LedgerError):
    pass


class UnknownId(LedgerError):
    pass


class InsufficientBalance(LedgerError):
    pass


class DuplicateId(LedgerError):
    pass


# channel
class ChannelError(EvpayError):
    pass


class ZeroDeposit(ChannelError):
    pass


class ChannelClosed(ChannelError):
    pass


class Overdraw(ChannelError):
    pass


class UnknownParty(ChannelError):
    pass


class SeqGap(ChannelError):
    pass


class SumMismatch(ChannelError):
    pass


class NotCosigned(ChannelError):
    pass


# bus
class BusError(EvpayError):
    pass


class MalformedTopic(BusError):
    pass


class MalformedFilter(BusError):
    pass


class DuplicateMessage(BusError):
    pass


# metering
class MeteringError(EvpayError):
    pass


class NegativeDelta(MeteringError):
    pass


class TimeRegression(MeteringError):
    pass


# agents
class AgentError(EvpayError):
    pass


class IllegalTransition(AgentError):
    pass


class EmptyRegistry(AgentError):
    pass


class UnknownSession(AgentError):
    pass


class PowerUnavailable(AgentError):
    pass


# simulation harness
class SimError(EvpayError):
    pass


class ParseError(SimError):
    pass


class DanglingReference(SimError):
    pass


class InvalidValue(SimError):
    pass


class TickLimitExceeded(SimError):
    """Raised when sessions are still live at the tick limit.

    The partial run is attached as ``result`` so callers can still write
    the event log.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
