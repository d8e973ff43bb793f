"""Service layer: request/response schemas, operations, and the FastAPI app.

The CLI and the HTTP routes share the operation functions in `ops`, so a
local invocation and a remote one execute identical code paths.
"""

from .app import create_app

__all__ = ["create_app"]
