"""Adam updates over named parameter tables.

Parameters, gradients, and moments all travel as name -> float64 array
dicts (the checkpoint layout), which keeps the optimizer independent of
the network structure.
"""

from dataclasses import dataclass

import numpy as np

from .errors import TrainingError, ValidationError


@dataclass
class AdamState:
    m: dict
    v: dict


def init_adam_state(params):
    return AdamState(m={k: np.zeros_like(np.asarray(a)) for k, a in params.items()},
                     v={k: np.zeros_like(np.asarray(a)) for k, a in params.items()})


def adam_step(params, grads, state, t, lr=1e-3, beta1=0.9, beta2=0.999, eps_hat=1e-8):
    """One bias-corrected Adam update; returns new params, mutates state.

    t is the 1-based update count shared by all groups.
    """
    if t < 1:
        raise ValidationError("t", f"update count starts at 1, got {t}")
    if lr < 0:
        # zero is legal and leaves parameters bit-identical (moments still decay)
        raise ValidationError("lr", f"learning rate must not be negative, got {lr}")
    if set(params) != set(grads):
        raise ValidationError("grads", "parameter and gradient names differ")
    out = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter group {name!r}")
        m = state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps_hat)
    return out
