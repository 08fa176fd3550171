"""Convergence bound for ParaBlock with local SGD and the matching rate schedule."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ScheduleError, TraceError


@dataclass(frozen=True)
class BoundInputs:
    eta: float
    eta_l: float
    T: int
    K: int
    N: int
    L: float
    sigma: float = 0.0
    sigma_g: float = 0.0
    F: float = 0.0

    def __post_init__(self):
        for name in ("T", "K", "N"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("eta", "eta_l", "L"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.sigma < 0 or self.sigma_g < 0 or self.F < 0:
            raise ValueError("sigma, sigma_g and F must be non-negative")


@dataclass(frozen=True)
class Feasibility:
    violations: tuple

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def lr_feasible(eta, eta_l, K, L):
    """Check ``eta_l <= 1/(22 K L)`` and ``eta * eta_l <= 1/(4 K L)`` (both inclusive)."""
    v = []
    if eta_l > 1.0 / (22 * K * L):
        v.append(f"eta_l={eta_l:g} > 1/(22KL)={1.0 / (22 * K * L):g}")
    if eta * eta_l > 1.0 / (4 * K * L):
        v.append(f"eta*eta_l={eta * eta_l:g} > 1/(4KL)={1.0 / (4 * K * L):g}")
    return Feasibility(tuple(v))


def bound_terms(b):
    """The four summands of the bound, in order."""
    eta, etal, T, K, N, L = b.eta, b.eta_l, b.T, b.K, b.N, b.L
    s2, g2 = b.sigma ** 2, b.sigma_g ** 2
    return (
        8 * b.F / (eta * etal * T * K),
        40 * etal ** 2 * L ** 2 * K * (s2 + 6 * K * g2),
        (8 * eta ** 2 * etal * L ** 2 * K + eta * L / 2) * (etal / N) * s2,
        64 * eta ** 2 * etal ** 2 * L ** 2 * K * (s2 + 10 * etal ** 2 * L ** 2 * K * (s2 + K * g2)),
    )


def bound_rhs(b):
    """Upper bound on the average squared block gradient norm over ``T`` rounds."""
    return float(sum(bound_terms(b)))


def sqrt_rate_schedule(T, K, N, L, c_eta=1.0, c_etal=1.0, max_halvings=60):
    """``eta = c_eta sqrt(K N)``, ``eta_l = c_etal / (sqrt(T) K)``, halving ``c_etal``
    until the rates pass :func:`lr_feasible`."""
    if min(T, K, N) <= 0 or L < 0 or c_eta <= 0 or c_etal <= 0:
        raise ValueError("T, K, N, c_eta, c_etal must be positive")
    eta = c_eta * math.sqrt(K * N)
    c = c_etal
    for _ in range(max_halvings + 1):
        eta_l = c / (math.sqrt(T) * K)
        if L == 0 or lr_feasible(eta, eta_l, K, L):
            return eta, eta_l
        c /= 2
    raise ScheduleError(f"no feasible eta_l after {max_halvings} halvings (eta={eta:g})")


@dataclass(frozen=True)
class BoundReport:
    measured: float
    bound: float
    rounds: int
    feasible: bool

    @property
    def ratio(self):
        if self.bound == 0:
            return 0.0 if self.measured == 0 else math.inf
        return self.measured / self.bound

    @property
    def holds(self):
        return self.measured <= self.bound

    def lines(self):
        return [
            f"rounds={self.rounds}",
            f"measured_avg_block_grad_norm_sq={self.measured:.17g}",
            f"bound_rhs={self.bound:.17g}",
            f"ratio={self.ratio:.17g}",
            f"lr_feasible={self.feasible}",
        ]


def trace_vs_bound(traces, inputs):
    """Compare the measured mean of ``||grad_{b_t} f(theta_t)||^2`` over all rounds with the bound."""
    if not traces:
        raise TraceError("empty trace")
    vals = [getattr(tr, "block_grad_norm_sq", None) for tr in traces]
    if any(v is None for v in vals):
        raise TraceError("trace lacks the block_grad_norm_sq channel")
    return BoundReport(float(np.mean(vals)), bound_rhs(inputs), len(vals),
                       lr_feasible(inputs.eta, inputs.eta_l, inputs.K, inputs.L).ok)
