class PercwebError(Exception):
    """Base class; the CLI maps subclasses to exit messages."""


class ConfigInvalid(PercwebError, ValueError):
    pass


class CapacityExceeded(PercwebError):
    pass


class RowExhausted(PercwebError):
    pass


class HorizonExceeded(PercwebError):
    pass


class RejectionBudgetExceeded(PercwebError):
    pass


class DisjointRanges(PercwebError, ValueError):
    pass


class EmptyCollection(PercwebError, ValueError):
    pass


class GridMisaligned(PercwebError, ValueError):
    pass


class SchemaMismatch(PercwebError):
    pass
