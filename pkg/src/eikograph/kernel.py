"""Radial kernel profiles, their normalisation constants and edge weights.

A kernel is a compactly supported, non-negative radial profile ``eta`` on
``[0, r_eta]`` that is non-increasing on ``[0, a]`` with ``eta(a) > 0`` and
Lipschitz on its support.  Scaled to bandwidth ``eps`` it gives the edge
weight

    J_eps(d) = eta(d / eps) / (eps * C_eta),    C_eta = sup_t t * eta(t).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

PROFILES = ("triangular", "tent", "box", "truncated-exponential")


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class Kernel:
    profile_id: str
    params: tuple = ()
    r_eta: float = 1.0
    a: float = 0.5
    lipschitz_L: float = 1.0

    def __call__(self, t):
        """Evaluate the profile; exactly zero outside ``[0, r_eta]``."""
        t = np.asarray(t, dtype=float)
        inside = (t >= 0.0) & (t <= self.r_eta)
        ts = np.where(inside, t, 0.0)
        if self.profile_id == "triangular":
            v = 1.0 - ts
        elif self.profile_id == "tent":
            v = 1.0 - ts / self.params[0]
        elif self.profile_id == "box":
            v = np.ones_like(ts)
        elif self.profile_id == "truncated-exponential":
            v = np.exp(-self.params[0] * ts)
        else:  # pragma: no cover - guarded by make_kernel
            raise KernelError(f"unknown profile {self.profile_id!r}")
        out = np.where(inside, np.maximum(v, 0.0), 0.0)
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"profile": self.profile_id, "params": list(self.params), "a": self.a}


@dataclass(frozen=True)
class KernelConstants:
    C_eta: float
    c_eta: float
    sup_eta: float
    argmax_t: float
    grid_step: float = field(default=1e-5, compare=False)

    def to_dict(self) -> dict:
        return {
            "C_eta": self.C_eta,
            "c_eta": self.c_eta,
            "sup_eta": self.sup_eta,
            "argmax_t": self.argmax_t,
            "grid_step": self.grid_step,
        }


def make_kernel(profile_id: str, params: Sequence[float] = (), a: float | None = None) -> Kernel:
    """Build a kernel from a profile name and its parameters.

    Profiles: ``triangular`` (no params), ``tent`` (width), ``box`` (width),
    ``truncated-exponential`` (rate, cutoff).  ``a`` defaults to half the
    support radius.
    """
    params = tuple(float(p) for p in params)
    if profile_id == "triangular":
        if params:
            raise KernelError("triangular takes no parameters")
        r_eta, lip = 1.0, 1.0
    elif profile_id in ("tent", "box"):
        if len(params) != 1 or not params[0] > 0:
            raise KernelError(f"{profile_id} needs one positive width")
        r_eta = params[0]
        lip = 1.0 / params[0] if profile_id == "tent" else 0.0
    elif profile_id == "truncated-exponential":
        if len(params) != 2 or not (params[0] > 0 and params[1] > 0):
            raise KernelError("truncated-exponential needs positive (rate, cutoff)")
        r_eta, lip = params[1], params[0]
    else:
        raise KernelError(f"unknown kernel profile {profile_id!r}; expected one of {PROFILES}")

    a = r_eta / 2.0 if a is None else float(a)
    if not 0.0 < a < r_eta:
        raise KernelError(f"a={a} must lie strictly inside (0, r_eta={r_eta})")
    kernel = Kernel(profile_id, params, r_eta, a, lip)

    grid = np.linspace(0.0, r_eta, 4097)
    vals = kernel(grid)
    if np.any(vals < 0):
        raise KernelError("kernel takes negative values")
    if not kernel(a) > 0.0:
        raise KernelError(f"eta(a)=0 at a={a}: kernel must be positive at the decrease radius")
    head = vals[grid <= a]
    if np.any(np.diff(head) > 0):
        raise KernelError("kernel must be non-increasing on [0, a]")
    return kernel


def _refine_max(fun, t0: float, h: float, lo: float, hi: float) -> tuple[float, float]:
    left, right = max(lo, t0 - h), min(hi, t0 + h)
    best_t, best_v = t0, float(fun(t0))
    if right > left:
        res = minimize_scalar(lambda t: -fun(t), bounds=(left, right), method="bounded",
                              options={"xatol": 1e-14})
        if -res.fun > best_v:
            best_t, best_v = float(res.x), float(-res.fun)
    return best_t, best_v


def kernel_constants(kernel: Kernel, grid_step: float = 1e-5) -> KernelConstants:
    """Compute ``C_eta``, ``sup eta`` and ``c_eta = eta(a)``.

    Suprema come from a dense grid on ``[0, r_eta]`` followed by one bounded
    scalar refinement around the best grid node.
    """
    if not grid_step > 0:
        raise KernelError("grid_step must be positive")
    m = int(np.ceil(kernel.r_eta / grid_step))
    grid = np.linspace(0.0, kernel.r_eta, m + 1)
    vals = kernel(grid)

    k = int(np.argmax(grid * vals))
    argmax_t, C_eta = _refine_max(lambda t: t * kernel(t), grid[k], grid_step, 0.0, kernel.r_eta)
    j = int(np.argmax(vals))
    _, sup_eta = _refine_max(kernel, grid[j], grid_step, 0.0, kernel.r_eta)
    c_eta = float(kernel(kernel.a))
    return KernelConstants(C_eta=float(C_eta), c_eta=c_eta, sup_eta=float(sup_eta), argmax_t=float(argmax_t),
                           grid_step=grid_step)


def weight(constants: KernelConstants, kernel: Kernel, epsilon: float, dtilde):
    """Scaled edge weight ``eta(d / eps) / (eps * C_eta)``; vectorised in ``dtilde``."""
    if not epsilon > 0:
        raise KernelError("epsilon must be positive")
    d = np.asarray(dtilde, dtype=float)
    # mask on d itself so rounding in d / eps cannot leak weight past the support
    w = np.where(d <= epsilon * kernel.r_eta, kernel(d / epsilon), 0.0) / (epsilon * constants.C_eta)
    return w if w.ndim else float(w)


def cfl_bound(constants: KernelConstants, epsilon: float) -> float:
    """Largest forward-Euler step keeping the scheme monotone."""
    return epsilon * constants.C_eta / constants.sup_eta
