"""Exception hierarchy shared across the package."""


class BurstlinkError(Exception):
    pass


# -- runtime ---------------------------------------------------------------

class FlowgraphError(BurstlinkError):
    pass


class KindMismatch(FlowgraphError):
    pass


class AlreadyConnected(FlowgraphError):
    pass


class UnknownPort(FlowgraphError):
    pass


class ValidationError(FlowgraphError):
    pass


class BlockWorkError(FlowgraphError):
    """Raised when a block's work or message handler fails.

    The failing block is available as ``block`` and the original exception
    is chained as ``__cause__``.
    """

    def __init__(self, block, exc):
        self.block = block
        super().__init__(f"block {block!r} failed: {type(exc).__name__}: {exc}")


class EmptyPayload(BurstlinkError):
    pass


# -- burst phy -------------------------------------------------------------

class PhyError(BurstlinkError):
    """Base for per-burst failures; these are counted and the burst dropped."""


class PayloadTooLong(PhyError):
    pass


class HeaderCrcError(PhyError):
    pass


class TooShort(PhyError):
    pass


class LengthNotMultiple(PhyError):
    pass


class UnknownCodec(PhyError):
    pass


class OddBitCount(PhyError):
    pass


class NoPeak(PhyError):
    pass


class ConfigError(BurstlinkError):
    pass


# -- io --------------------------------------------------------------------

class MalformedFile(BurstlinkError):
    pass


class MalformedDatagram(BurstlinkError):
    pass


class OversizePdu(BurstlinkError):
    pass
