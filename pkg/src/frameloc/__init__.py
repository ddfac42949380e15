"""Frame localization toolkit for multiple-choice video question answering.

Submodules load on first attribute access so that ``import frameloc`` stays
cheap and the command line can pin BLAS thread counts before numpy loads.
"""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = (
    "composite",
    "datamodel",
    "evalkit",
    "influence",
    "relevance",
    "store",
    "synthetic",
    "cli",
)

__all__ = [*_SUBMODULES, "__version__"]


def __getattr__(name: str):
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__() -> list[str]:
    return sorted(__all__)
