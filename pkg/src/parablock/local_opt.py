"""Block-restricted local optimizers (SGD and AdamW).

Steps are pure functions over a block slice; optimizer state is sized to
the active block and is created fresh for every call of local training.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericError


@dataclass(frozen=True)
class SgdConfig:
    eta_l: float

    def __post_init__(self):
        if not self.eta_l > 0:
            raise ValueError(f"eta_l must be > 0, got {self.eta_l}")


@dataclass(frozen=True)
class AdamWConfig:
    """AdamW hyper-parameters.

    ``eps_inside_sqrt`` switches the denominator from ``sqrt(v_hat) + eps``
    to ``sqrt(v_hat + eps)``.
    """

    eta_l: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-6
    weight_decay: float = 0.0
    bias_correction: bool = True
    eps_inside_sqrt: bool = False

    def __post_init__(self):
        if not self.eta_l > 0:
            raise ValueError(f"eta_l must be > 0, got {self.eta_l}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ValueError(f"{name} must be in [0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def _finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what}")


def sgd_step(theta_block, g_block, cfg):
    _finite(g_block, "gradient")
    with np.errstate(over="ignore", invalid="ignore"):  # reported below as NumericError
        out = theta_block - cfg.eta_l * g_block
    _finite(out, "parameters after SGD step")
    return out


def adamw_step(theta_block, g_block, state, cfg):
    """One AdamW step; returns ``(new_theta_block, new_state)``."""
    _finite(g_block, "gradient")
    if state.m.shape != np.shape(g_block):
        raise ValueError(f"optimizer state sized {state.m.shape} for block of shape {np.shape(g_block)}")
    k = state.step_count + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g_block
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * (g_block * g_block)
    if cfg.bias_correction:
        m_hat = m / (1.0 - cfg.beta1 ** k)
        v_hat = v / (1.0 - cfg.beta2 ** k)
    else:
        m_hat, v_hat = m, v
    if cfg.eps_inside_sqrt:
        denom = np.sqrt(v_hat + cfg.epsilon)
    else:
        denom = np.sqrt(v_hat) + cfg.epsilon
    out = theta_block - cfg.eta_l * (m_hat / denom + cfg.weight_decay * theta_block)
    _finite(out, "parameters after AdamW step")
    return out, OptimizerState(m, v, k)


def make_stepper(cfg, block_size):
    """Return a closure ``step(theta_block, g_block) -> theta_block`` with fresh state."""
    if isinstance(cfg, SgdConfig):
        return lambda th, g: sgd_step(th, g, cfg)
    if isinstance(cfg, AdamWConfig):
        state = OptimizerState.zeros(block_size)

        def step(th, g):
            nonlocal state
            out, state = adamw_step(th, g, state, cfg)
            return out
        return step
    raise TypeError(f"unsupported optimizer config {type(cfg).__name__}")
