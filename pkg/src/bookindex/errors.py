"""Exception hierarchy.

Every error raised by the package derives from :class:`BookIndexError`. The
``exit_code`` attribute is used by the CLI to map failures onto its
documented exit statuses (2 = data error, 3 = gateway error).
"""

from __future__ import annotations


class BookIndexError(Exception):
    exit_code = 2


# ingest
class FormatError(BookIndexError):
    pass


class MissingField(FormatError):
    pass


class UnresolvableImage(BookIndexError):
    pass


# gateway
class GatewayError(BookIndexError):
    exit_code = 3


class GatewayTimeout(GatewayError):
    pass


class MalformedVerdict(BookIndexError):
    """A model reply could not be parsed into the expected structure."""


# tree / graph / resolution
class UnknownNode(BookIndexError, KeyError):
    pass


class UnknownEntity(BookIndexError, KeyError):
    pass


class EmptyExtraction(BookIndexError):
    pass


class DimensionMismatch(BookIndexError, ValueError):
    pass


# index persistence
class EmptyDocument(BookIndexError):
    pass


class IndexIOError(BookIndexError):
    pass


class VersionMismatch(BookIndexError):
    pass


class CorruptIndex(BookIndexError):
    pass


# planning / execution
class PlanValidationError(BookIndexError):
    pass


class InvalidRange(BookIndexError, ValueError):
    pass


class NoSectionSelected(BookIndexError):
    pass


class MissingScore(BookIndexError, ValueError):
    pass


# evaluation
class EmptyGold(BookIndexError, ValueError):
    pass


class EmptyDataset(BookIndexError):
    pass


class LevelJumpWarning(UserWarning):
    """A Section is more than one level deeper than the Section before it."""
