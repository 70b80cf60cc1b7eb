"""Exception hierarchy shared by every pipeline stage."""


class MobmineError(Exception):
    """Base class; the CLI maps it to exit status 1."""


class InvalidConfig(MobmineError, ValueError):
    pass


class ParseError(MobmineError):
    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class ReferentialError(MobmineError):
    """Raised when records reference ids that do not exist (cells, zones)."""

    def __init__(self, message: str, offenders=()):
        self.offenders = sorted(set(offenders))
        shown = ", ".join(self.offenders[:10])
        more = "" if len(self.offenders) <= 10 else f" (+{len(self.offenders) - 10} more)"
        super().__init__(f"{message}: {shown}{more}" if self.offenders else message)


class WeakSaltError(MobmineError):
    pass


class PrivacyGateError(MobmineError):
    """A privacy invariant was violated; the CLI maps it to exit status 3."""
