"""Exception hierarchy shared across the package."""


class LogitestError(Exception):
    """Base class for all package errors."""


class MalformedDocument(LogitestError):
    pass


class EmptySpec(LogitestError):
    pass


class ZeroVector(LogitestError, ValueError):
    pass


class LengthMismatch(LogitestError, ValueError):
    pass


class GatewayError(LogitestError):
    """A model provider call failed for good (retries exhausted, auth, bad reply)."""


class ScriptExhausted(GatewayError):
    pass


class ScenarioStillActive(LogitestError):
    pass


class NoActiveScenario(LogitestError):
    pass


class ParseFailure(LogitestError, ValueError):
    def __init__(self, kind: str, diagnostic: str):
        super().__init__(f"{kind}: {diagnostic}")
        self.kind = kind
        self.diagnostic = diagnostic


class UnparseableVerdict(LogitestError):
    pass


class GenerationFailed(LogitestError):
    pass


class RequestConstructionFailed(LogitestError):
    pass


class FatalSetup(LogitestError):
    pass


class PortInUse(LogitestError, OSError):
    pass
