"""Exception hierarchy shared across the package."""


class LinearRagError(Exception):
    """Base class for every error this package raises deliberately."""


class IngestError(LinearRagError):
    """Corpus input could not be read."""


class EmptyCorpusError(IngestError):
    """Ingestion finished with zero valid passages."""


class ConfigError(LinearRagError):
    """Unknown strategy/encoder/template id, or an invalid configuration value."""


class UpdateError(LinearRagError):
    """Incremental graph update rejected (id collision or non-contiguous ids)."""


class IndexLoadError(LinearRagError):
    """A persisted index could not be loaded."""


class VersionMismatchError(IndexLoadError):
    """Index was written by an incompatible format version."""


class DigestMismatchError(IndexLoadError):
    """Stored corpus digest does not match the recomputed one."""


class ConsistencyError(IndexLoadError):
    """Index files disagree with each other or with their own invariants."""


class EncodingError(LinearRagError):
    """The configured encoder cannot produce vectors at runtime."""


class EmptySeedError(LinearRagError):
    """Importance aggregation was given an all-zero reset vector."""
