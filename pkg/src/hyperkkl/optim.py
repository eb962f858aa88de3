"""Adam with bias correction, global-norm gradient clipping, grad checking."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, NumericError
from .params import ParamStore, ParamVars
from . import autodiff as ad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> "AdamState":
        return cls(m=np.zeros_like(params.data), v=np.zeros_like(params.data))


def adam_step(
    state: AdamState,
    params: ParamStore,
    grads: ParamStore,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """One Adam update, in place on ``params``; advances the step count."""
    if params.layout != grads.layout:
        raise ContractViolation("params and grads have different layouts")
    if state.m.shape != params.data.shape:
        raise ContractViolation("optimizer state does not match params")
    state.step += 1
    g = grads.data
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1**state.step)
    v_hat = state.v / (1.0 - beta2**state.step)
    params.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def global_norm(grads: ParamStore) -> float:
    return float(np.sqrt(np.sum(grads.data**2)))


def clip_grad_norm(grads: ParamStore, max_norm: float) -> ParamStore:
    """Scale grads so the global L2 norm is at most max_norm (in place)."""
    if max_norm <= 0:
        raise ContractViolation("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        grads.data *= max_norm / norm
    return grads


def grad_check(loss_fn, params: ParamStore, eps: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_fn`` is called once with ParamVars (recorded) and then with the
    plain ParamStore while each coordinate is perturbed by +-eps. The
    relative error per coordinate is |fd - g| / (|fd| + |g| + 1e-12).
    """
    if eps <= 0:
        raise ContractViolation("eps must be positive")

    pv = ParamVars(params)
    out = loss_fn(pv)
    if not ad.is_var(out):
        raise ContractViolation("loss must depend on the parameters")
    if not np.isfinite(out.value):
        raise NumericError("loss is non-finite")
    ad.backward(out)
    analytic = pv.grads().data

    def scalar_loss():
        v = loss_fn(params)
        v = float(ad.val(v))
        if not np.isfinite(v):
            raise NumericError("loss is non-finite during finite differences")
        return v

    worst = 0.0
    flat = params.data
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = scalar_loss()
        flat[i] = orig - eps
        down = scalar_loss()
        flat[i] = orig
        fd = (up - down) / (2.0 * eps)
        g = analytic[i]
        err = abs(fd - g) / (abs(fd) + abs(g) + 1e-12)
        if err > worst:
            worst = err
    return worst
