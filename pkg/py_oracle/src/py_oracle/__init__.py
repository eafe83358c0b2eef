"""Reference external fitness oracle over a torch transformer."""

from .model import BlockGuard, LayerDropHost, byte_encode
from .server import handle_request, serve_stdio, serve_tcp

__version__ = "0.1.0"

__all__ = ["BlockGuard", "LayerDropHost", "byte_encode", "handle_request", "serve_stdio", "serve_tcp"]
