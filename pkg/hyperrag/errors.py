# hyperrag/errors.py
from __future__ import annotations

from typing import Optional


class HyperRagError(Exception):
    """Base for every error the engine raises on purpose."""


class ConfigError(HyperRagError):
    pass


class UsageError(HyperRagError):
    """Bad command-line flags."""


# ---- knowledge base ----

class EmptyNameError(HyperRagError):
    pass


class UnknownEntityError(HyperRagError):
    def __init__(self, entity_id: str):
        super().__init__(f"unknown entity: {entity_id}")
        self.entity_id = entity_id


class ArityTooSmallError(HyperRagError):
    pass


class WeightOutOfRangeError(HyperRagError):
    pass


class KnowledgeBaseIOError(HyperRagError):
    pass


class VersionMismatchError(HyperRagError):
    pass


class CorruptManifestError(HyperRagError):
    pass


class IntegrityError(HyperRagError):
    """A cross-reference inside the knowledge base does not resolve."""


class KbNotLoadedError(HyperRagError):
    pass


# ---- vectors ----

class DimensionMismatchError(HyperRagError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class ZeroVectorError(HyperRagError):
    pass


# ---- descriptors / providers ----

class DecodeError(HyperRagError):
    pass


class EmptyInputError(HyperRagError):
    pass


class ProviderError(HyperRagError):
    def __init__(self, kind: str, reason: str, attempts: int = 1, detail: Optional[str] = None):
        msg = f"{kind} provider failed ({reason}) after {attempts} attempt(s)"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.kind = kind
        self.reason = reason
        self.attempts = attempts


# ---- construction / retrieval / generation ----

class EmptyDocumentError(HyperRagError):
    pass


class ParseFailure(HyperRagError):
    """Model output could not be parsed into the expected JSON shape."""


class MissingDescriptorError(HyperRagError):
    def __init__(self, criterion: str, image_id: str):
        super().__init__(f"image {image_id} has no descriptor for criterion {criterion}")
        self.criterion = criterion
        self.image_id = image_id


class EmptyRankingsError(HyperRagError):
    pass


class ContextOverflowError(HyperRagError):
    pass


class CorpusError(HyperRagError):
    """A corpus input (document, image, manifest) is missing or unreadable."""
