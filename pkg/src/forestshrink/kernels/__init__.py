"""Hot numerical kernels with a numba backend and a pure-numpy fallback.

The numba backend is used when numba imports cleanly, unless the
environment variable ``FORESTSHRINK_NUMBA`` is set to ``0``/``false``/``no``.
The choice is made once at import time; ``BACKEND`` records it.
"""
import os

from . import _numpy

UNPENALIZED, LASSO, RIDGE, FROZEN = 0, 1, 2, 3


def _numba_requested() -> bool:
    return os.environ.get("FORESTSHRINK_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


_impl = _numpy
BACKEND = "numpy"
if _numba_requested():
    try:
        from . import _numba

        _impl = _numba
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is an optional speedup
        pass

cox_loglik = _impl.cox_loglik
cox_derivatives = _impl.cox_derivatives
quad_cd = _impl.quad_cd
hs_loglik_grad = _impl.hs_loglik_grad
standardize_grid = _impl.standardize_grid
cd_path = _impl.cd_path
hs_log_posterior = _impl.hs_log_posterior
penalty_value = _impl.penalty_value

__all__ = [
    "BACKEND",
    "cox_loglik",
    "cox_derivatives",
    "quad_cd",
    "hs_loglik_grad",
    "standardize_grid",
    "cd_path",
    "hs_log_posterior",
    "penalty_value",
    "UNPENALIZED",
    "LASSO",
    "RIDGE",
    "FROZEN",
]
