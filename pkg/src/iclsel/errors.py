"""Exception hierarchy shared across the package."""


class IclSelError(Exception):
    """Base class for all package errors."""


class ConfigError(IclSelError):
    """Bad run configuration: unknown enum value, out-of-range parameter, missing path."""


class DatasetError(IclSelError):
    """Malformed dataset file or descriptor; message carries file/line context."""


class TemplateError(IclSelError):
    """Template cannot render an example (missing field, missing verbalizer entry,
    or a demo pattern that is not an extension of its query pattern)."""


class RetrievalError(IclSelError):
    """Index or embedding-store misuse: unknown id, dimension mismatch, empty corpus."""


class BackendError(IclSelError):
    """A log-probability backend failed to serve a request."""


class MockMissError(BackendError):
    """A mock backend was asked for a (context, continuation) pair outside its table."""


class ProtocolError(BackendError):
    """An HTTP backend response violated the wire protocol schema."""


class SelectionError(IclSelError):
    """Selection preconditions violated (too few candidates, unlabeled oracle query)."""
