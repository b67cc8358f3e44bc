"""Kernel backend selection.

Prefers the compiled extension ``govmpc._core`` and falls back to the
pure-NumPy kernels when the extension was not built.  Everything downstream
imports the kernels from here; ``govmpc._kernels_py`` stays importable
directly for parity tests and backend benchmarks.
"""

from . import _kernels_py

GAMMA_MAX = _kernels_py.GAMMA_MAX
W_VALUE = _kernels_py.W_VALUE
W_EMPTY = _kernels_py.W_EMPTY
W_ALL = _kernels_py.W_ALL

try:
    from . import _core as _impl

    COMPILED = True
except ImportError:
    _impl = _kernels_py
    COMPILED = False

eta_line_parts = _impl.eta_line_parts
max_feasible_w = _impl.max_feasible_w
longstep_loop = _impl.longstep_loop
newton_batch = _impl.newton_batch
seidel_lp = _impl.seidel_lp


def backend_name():
    """Name of the active kernel backend."""
    return "compiled" if COMPILED else "python"
