"""Document QA over a section tree, an entity graph and the links between them."""

from bookindex.errors import BookIndexError

__version__ = "0.1.0"

__all__ = ["BookIndexError", "__version__"]
