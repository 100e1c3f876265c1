"""Sacks-Uhlenbeck alpha-harmonic maps from S^2 into warped cylinders S^2 x I.

Submodules: warpgeom, spheremesh, energy, solver, bubbles, spectrum, cli.
They are imported lazily so that thread settings made by the command line
entry point take effect before numpy is loaded.
"""
import importlib

__version__ = "0.1.0"

_SUBMODULES = ("warpgeom", "spheremesh", "energy", "solver", "bubbles", "spectrum", "cli")


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f"{__name__}.{name}")
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
