"""Numerics for concentrating plasma spikes of ``-Lap v = mu [v - 1]_+^p``.

Submodules are imported on demand; the package root stays light so the
command line can configure thread pools before numpy loads.
"""

__version__ = "0.1.0"
