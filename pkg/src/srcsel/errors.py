"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(PipelineError):
    """Malformed input file (CoNLL data, manifest, or a stored artifact)."""


class ConfigError(PipelineError):
    """Invalid configuration, flag combination, or dataset precondition."""


class DependencyError(PipelineError):
    """A pipeline stage was invoked before the stage it depends on."""


class MissingObservationError(PipelineError):
    """A requested evaluation needs transfer observations that do not exist yet."""

    def __init__(self, missing: list[tuple[str, tuple[str, ...], str]]):
        self.missing = list(missing)
        lines = [
            f"needs observation: setting={s} target={t} sources={','.join(srcs) or '(empty)'}"
            for s, srcs, t in self.missing
        ]
        super().__init__(
            "selection evaluation requires observations that are not in the log:\n"
            + "\n".join(lines)
        )
