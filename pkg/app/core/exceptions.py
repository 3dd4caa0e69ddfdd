"""
Domain errors.

Every error carries the short ``detail`` string that callers match on, plus free-form
``context`` for logs and manifests. ``exit_code`` is what the CLI returns.
"""

from typing import Any, Dict, Optional


class StyleforgeError(Exception):
    """Base class for all styleforge errors."""

    exit_code: int = 3

    def __init__(self, detail: str, **context: Any):
        super().__init__(detail)
        self.detail = detail
        self.context: Dict[str, Any] = context

    def __str__(self) -> str:
        if not self.context:
            return self.detail
        extras = ", ".join(f"{key}={value!r}" for key, value in self.context.items())
        return f"{self.detail} ({extras})"


class ConfigError(StyleforgeError):
    """Configuration cannot be read, parsed or validated."""
    exit_code = 2


class UsageError(StyleforgeError):
    """Command-line usage error."""
    exit_code = 2


class NoContentError(StyleforgeError):
    def __init__(self, **context: Any):
        super().__init__("no content between markers", **context)


class MissingAuthorError(StyleforgeError):
    def __init__(self, **context: Any):
        super().__init__("author without documents", **context)


class TagHygieneError(StyleforgeError):
    def __init__(self, **context: Any):
        super().__init__("tag found in sentence text", **context)


class TagCollisionError(StyleforgeError):
    def __init__(self, **context: Any):
        super().__init__("tag not single-token", **context)


class ContextOverflowError(StyleforgeError):
    def __init__(self, **context: Any):
        super().__init__("context overflow", **context)


class DivergenceError(StyleforgeError):
    """Training produced a non-finite loss; ``report`` holds the partial training report."""

    def __init__(self, report: Optional[Any] = None, **context: Any):
        super().__init__("divergence", **context)
        self.report = report


class EmptySentenceError(StyleforgeError):
    def __init__(self, **context: Any):
        super().__init__("empty sentence", **context)


class MalformedTreeError(StyleforgeError):
    def __init__(self, **context: Any):
        super().__init__("malformed tree", **context)


class EmptyQuerySetError(StyleforgeError):
    def __init__(self, **context: Any):
        super().__init__("empty query set", **context)


class NumericalFailureError(StyleforgeError):
    def __init__(self, alpha: float, **context: Any):
        super().__init__("numerical failure", alpha=alpha, **context)
        self.alpha = alpha


class StageFailure(StyleforgeError):
    """A pipeline stage failed; wraps the underlying error."""

    exit_code = 3

    def __init__(self, stage: str, cause: BaseException, manifest_path: Optional[str] = None):
        super().__init__(f"stage '{stage}' failed: {cause}", stage=stage, manifest=manifest_path)
        self.stage = stage
        self.cause = cause
        self.manifest_path = manifest_path
