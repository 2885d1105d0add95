"""Exception hierarchy shared by every module."""


class KercnnError(Exception):
    """Base class for all library errors."""


class DimensionError(KercnnError, ValueError):
    pass


class ConfigError(KercnnError, ValueError):
    pass


class InvalidBoxError(KercnnError, ValueError):
    pass


class ValidationError(KercnnError, ValueError):
    pass


class ParseError(KercnnError, ValueError):
    """Malformed file. ``line`` and ``offset`` locate the problem when known."""

    def __init__(self, message, line=None, offset=None):
        where = ""
        if line is not None:
            where = f" (line {line}" + (f", offset {offset})" if offset is not None else ")")
        super().__init__(message + where)
        self.line = line
        self.offset = offset


class NoCandidatesError(KercnnError):
    """No attribute survives knowledge filtering; ``c_star`` holds the scores."""

    def __init__(self, c_star, part=None):
        self.c_star = c_star
        self.part = part
        msg = "no candidate attributes above threshold"
        if part is not None:
            msg += f" for part {part}"
        super().__init__(msg)


class DivergenceError(KercnnError, FloatingPointError):
    def __init__(self, epoch, batch, value):
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class UndefinedMetricError(KercnnError, ValueError):
    pass


class GradCheckError(KercnnError, FloatingPointError):
    pass
