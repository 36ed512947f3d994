from .service import (
    ALL_BUGS,
    FixtureHandle,
    FixtureState,
    PetstoreApp,
    openapi_path,
    openapi_text,
    reset_fixture,
    serve_fixture,
)

__all__ = [
    "ALL_BUGS",
    "FixtureHandle",
    "FixtureState",
    "PetstoreApp",
    "openapi_path",
    "openapi_text",
    "reset_fixture",
    "serve_fixture",
]
