"""Exception hierarchy shared across the pipeline."""


class MangaFlowError(Exception):
    """Base class for all pipeline errors."""


class ValidationError(MangaFlowError):
    """A value violates a documented invariant or schema."""


class InfeasibleLayoutError(ValidationError):
    """Layout constraints cannot be satisfied on a unit page."""


class PlanError(MangaFlowError):
    """Story planning failed."""

    def __init__(self, message: str, raw_text: str | None = None):
        super().__init__(message)
        self.raw_text = raw_text


class GatewayError(MangaFlowError):
    """Base class for model-gateway failures."""


class CredentialError(GatewayError):
    """A live/record call was attempted without the required API key."""


class CassetteMissError(GatewayError):
    """Replay mode found no cassette entry for a request key."""

    def __init__(self, key: str):
        super().__init__(f"no cassette entry for request key {key}")
        self.key = key


class ProviderError(GatewayError):
    """The provider returned an error, or retries ran out."""

    def __init__(self, message: str, transient: bool = False,
                 status: int | None = None):
        super().__init__(message)
        self.transient = transient
        self.status = status


class RenderError(MangaFlowError):
    """Panel rendering failed after retries."""

    def __init__(self, message: str, prompt_digest: str | None = None):
        super().__init__(message)
        self.prompt_digest = prompt_digest


class ComposeError(MangaFlowError):
    """Page or book composition failed."""


class LetteringError(MangaFlowError):
    """Bubble placement or rasterization failed."""


class StageError(MangaFlowError):
    """A pipeline stage aborted; partial project state is preserved."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
