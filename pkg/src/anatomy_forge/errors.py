"""Exception taxonomy. The CLI maps ForgeError to the data-error exit code."""


class ForgeError(Exception):
    """Base class for all anatomy-forge failures."""


class DataFormatError(ForgeError):
    """A file on disk is malformed or uses an unsupported encoding."""


class NiftiError(DataFormatError):
    pass


class GraphParseError(DataFormatError):
    """Relation-graph config rejected; message carries the line number."""


class BankError(ForgeError):
    """Shape-bank construction or lookup failed."""


class FitError(ForgeError):
    """Anchor fitting failed (e.g. a class absent from every source)."""


class PlacementError(ForgeError):
    """A candidate pose cannot be generated for the given scene."""


class SceneError(ForgeError):
    """Scene synthesis produced no placements at all."""
