"""Exception hierarchy shared across the package."""


class ParameterDomainError(ValueError):
    """A model parameter lies outside its valid domain."""


class DiscretizationError(ValueError):
    """A trajectory or cell does not fit the grid it is used with."""


class OrderingError(DiscretizationError):
    """Path samples or trajectory cells are not in increasing time order."""


class DegenerateLabelsError(ValueError):
    """ROC input contains only one class."""


class InconsistentObservationError(RuntimeError):
    """No reachable parameter point gives the observations nonzero probability."""


class TileDecodeError(ValueError):
    """Base class for malformed tile payloads."""


class BadMagicError(TileDecodeError):
    pass


class UnsupportedVersionError(TileDecodeError):
    pass


class TruncatedPayloadError(TileDecodeError):
    pass


class UnsortedEntriesError(TileDecodeError):
    pass


class DuplicateEntryError(TileDecodeError):
    pass


class ProtocolError(RuntimeError):
    """Malformed request or response on the map-distribution wire."""


class TransportError(RuntimeError):
    """The map server could not be reached or the connection broke."""
