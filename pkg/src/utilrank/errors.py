"""Exception types shared across the package.

``EndpointError`` subclasses indicate a remote dependency failed (embedding
or judge endpoint, run store); everything else is a data or usage error.
The CLI maps the two families onto different exit codes.
"""


class UtilrankError(Exception):
    """Base class for all errors raised by this package."""


class EndpointError(UtilrankError):
    """A remote endpoint or storage backend could not be used."""


# --- ingest ---------------------------------------------------------------

class EmptyDocument(UtilrankError):
    """Document contains no non-whitespace content."""


class MalformedPageMarker(UtilrankError):
    """Page marker with a non-numeric or non-increasing page number."""


class UnclosedTable(UtilrankError):
    """HTML-style table without a closing tag."""


class FrontMatterError(UtilrankError):
    """Corpus file front matter is missing or incomplete."""


# --- index ----------------------------------------------------------------

class DuplicateSegmentId(UtilrankError):
    """Two segments with the same id were offered to an index build."""


class ProviderUnavailable(EndpointError):
    """Embedding provider failed after the configured retries."""


class DimensionMismatch(UtilrankError):
    """Vector dimension disagrees with the index dimension."""


# --- judge ----------------------------------------------------------------

class ModelUnavailable(EndpointError):
    """Model endpoint unreachable after the configured retries."""


class MalformedVerdict(UtilrankError):
    """Model output contained no parseable verdict object."""


# --- controller -----------------------------------------------------------

class MissingVerdict(UtilrankError):
    """A pooled candidate reached the gate without a verdict."""


class InvalidThreshold(UtilrankError):
    """Utility threshold outside [0, 1]."""


# --- pipeline -------------------------------------------------------------

class StoreUnavailable(EndpointError):
    """Run store path cannot be created or written."""


class RunNotFound(UtilrankError):
    """No persisted run with the requested id."""


# --- evalbench ------------------------------------------------------------

class InvalidParams(UtilrankError):
    """Benchmark parameters outside their valid range."""


class NoGoldLabels(UtilrankError):
    """Recall requested for a query with no gold-labelled segments."""
