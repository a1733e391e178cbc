"""Training kernel backend selection.

Two interchangeable implementations of the hot per-batch kernels exist:
a compiled extension (``_fastcore``) and a pure-numpy fallback
(``reference``). Which one is active is decided once, at import time:

* ``FEDANCHOR_KERNELS=python``   always use the numpy fallback
* ``FEDANCHOR_KERNELS=compiled`` require the extension, fail loudly
* unset                          try the extension, fall back silently

Both backends implement the same formulas with per-element arithmetic in
the same order for ``sgd_update``; ``grad_batch`` may differ from the
fallback by accumulation order, so cross-backend comparisons of trained
parameters use a relative tolerance rather than equality. Everything
outside the training loop (prototypes, aggregation, evaluation) is plain
numpy and does not depend on this choice.
"""

import os

_choice = os.environ.get("FEDANCHOR_KERNELS", "").strip().lower()

if _choice == "python":
    from . import reference as _impl

    BACKEND = "python"
elif _choice == "compiled":
    from . import _fastcore as _impl

    BACKEND = "compiled"
else:
    try:
        from . import _fastcore as _impl

        BACKEND = "compiled"
    except ImportError:
        from . import reference as _impl

        BACKEND = "python"

grad_batch = _impl.grad_batch
sgd_update = _impl.sgd_update

__all__ = ["grad_batch", "sgd_update", "BACKEND"]
