"""Exception types shared across the engine."""


class PromptCaseError(Exception):
    """Base class for engine errors."""


class ConfigError(PromptCaseError):
    """Bad usage or configuration; the CLI maps this to exit code 2."""


class CorpusError(PromptCaseError):
    """Corpus cannot be loaded or violates a structural invariant."""


class ExtractionError(PromptCaseError):
    """A document cannot yield legal features."""


class RetrievalError(PromptCaseError):
    """Ranking failures: unknown candidates, empty pools, bad stage config."""


class BackendError(PromptCaseError):
    """Embedding backend failure (transport, protocol, or contract)."""


class DimensionMismatchError(BackendError):
    """Vectors of incompatible dimension were combined or compared."""


class EvaluationError(PromptCaseError):
    """Run/judgment mismatch or other evaluation failure."""
