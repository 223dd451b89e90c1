"""Scoring kernel selection: compiled extension if built, numpy otherwise."""

try:
    from . import _scoring as active  # type: ignore[attr-defined]

    BACKEND = "compiled"
except ImportError:  # extension not built
    from . import py_fallback as active  # type: ignore[no-redef]

    BACKEND = "python"

__all__ = ["active", "BACKEND"]
