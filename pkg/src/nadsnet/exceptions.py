"""Exception hierarchy shared by every stage of the pipeline."""


class NadsNetError(Exception):
    """Base class for all library errors."""


class ShapeError(NadsNetError, ValueError):
    """Tensor shapes or channel counts do not line up."""


class ConfigError(NadsNetError, ValueError):
    """An architecture, target or parse configuration is invalid."""


class FormatError(NadsNetError, ValueError):
    """A file on disk does not follow its documented layout."""


class TruncatedError(FormatError):
    """A tensor payload is shorter than its header promises."""


class ValidationError(NadsNetError, ValueError):
    """An annotation record violates a schema invariant.

    ``image_id`` and ``field`` name the offending record and key so callers
    can report exactly what to fix.
    """

    def __init__(self, message, image_id=None, field=None, line=None):
        self.image_id = image_id
        self.field = field
        self.line = line
        self.detail = message
        where = []
        if line is not None:
            where.append(f"line {line}")
        if image_id is not None:
            where.append(f"image_id={image_id!r}")
        if field is not None:
            where.append(f"field={field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class DegenerateSegmentError(NadsNetError, ValueError):
    """A limb candidate segment has coincident endpoints."""


class InvariantError(NadsNetError, RuntimeError):
    """An internal consistency check failed; indicates a bug, not bad input."""
