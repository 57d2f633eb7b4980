"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it was built; otherwise the
numpy fallback is used.  ``LORA_LAB_KERNELS=python`` forces the fallback and
``LORA_LAB_KERNELS=cython`` makes a missing extension an import error.
"""

import os

from . import _kernels_py

_choice = os.environ.get("LORA_LAB_KERNELS", "auto").strip().lower()
if _choice not in ("auto", "cython", "python"):
    raise ImportError(f"LORA_LAB_KERNELS must be auto, cython or python, not {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _ckernels as _compiled
    except ImportError:
        if _choice == "cython":
            raise

BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_impl = BACKENDS[BACKEND]


def get_backend(name=None):
    """Kernel module by name; ``None`` gives the active one."""
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available (have {sorted(BACKENDS)})") from None


def lora_loss_grads(cache, w_out, A, B, scale, dA, dB, rows=None, backend=None):
    """Loss at ``(A, B)`` on ``cache`` (or its ``rows``); gradients in place."""
    impl = get_backend(backend)
    u, base, t = cache.u, cache.base, cache.targets
    if rows is not None:
        u, base, t = u[rows], base[rows], t[rows]
    return impl.lora_loss_grads(u, base, w_out, A, B, t, float(scale), dA, dB)


def lora_eval(cache, w_out, A, B, scale, backend=None):
    impl = get_backend(backend)
    return impl.lora_eval(cache.u, cache.base, w_out, A, B, cache.targets, float(scale))


def _flat(a):
    if not a.flags.c_contiguous:
        raise ValueError("in-place kernels need C-contiguous arrays")
    return a.reshape(-1)


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2, backend=None):
    get_backend(backend).adamw_update(
        _flat(p), _flat(g), _flat(m), _flat(v),
        float(lr), float(beta1), float(beta2), float(eps), float(weight_decay), float(bc1), float(bc2),
    )


def sign_update(p, g, lr, backend=None):
    get_backend(backend).sign_update(_flat(p), _flat(g), float(lr))


def sgd_update(p, g, lr, backend=None):
    get_backend(backend).sgd_update(_flat(p), _flat(g), float(lr))
