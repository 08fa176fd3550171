"""Block schedulers: which block every client trains in round ``t``."""

import numpy as np

from .errors import SchedulerError
from .rng import stream


class Scheduler:
    kind = "abstract"

    def needs_gradient(self, t):
        return False

    def next_block(self, t, B, grad_info=None):
        raise NotImplementedError


class SequentialScheduler(Scheduler):
    kind = "sequential"

    def next_block(self, t, B, grad_info=None):
        return t % B + 1


class ReverseScheduler(Scheduler):
    kind = "reverse"

    def next_block(self, t, B, grad_info=None):
        return B - t % B


class RandomScheduler(Scheduler):
    """Uniform block per round from a per-round stream; stateless in ``t``."""

    kind = "random"

    def __init__(self, seed=0):
        self.seed = int(seed)

    def next_block(self, t, B, grad_info=None):
        return int(stream(self.seed, round=t, tag="scheduler").integers(B)) + 1


class GradientGuidedScheduler(Scheduler):
    """Every ``refresh_every`` rounds, rank blocks by gradient norm (descending)
    and emit them in that order until the next refresh.

    ``grad_info`` is ``(full_gradient, partition)`` at the current global model.
    Equal norms keep the lower block id first.
    """

    kind = "gradient_guided"

    def __init__(self, refresh_every=None):
        if refresh_every is not None and refresh_every < 1:
            raise SchedulerError(f"refresh_every must be >= 1, got {refresh_every}")
        self.refresh_every = refresh_every
        self._order = None
        self._since = 0

    def needs_gradient(self, t):
        return self._order is None or self._since >= (self.refresh_every or len(self._order))

    def next_block(self, t, B, grad_info=None):
        if self.needs_gradient(t):
            if grad_info is None:
                raise SchedulerError(f"gradient-guided scheduler needs gradient info at round {t}")
            g, p = grad_info
            norms = np.array([np.linalg.norm(g[p.slice(b)]) for b in range(1, B + 1)])
            self._order = [int(b) + 1 for b in np.argsort(-norms, kind="stable")]
            self._since = 0
        b = self._order[self._since % B]
        self._since += 1
        return b


def make_scheduler(kind, *, seed=0, refresh_every=None):
    if kind == "random":
        return RandomScheduler(seed)
    if kind == "sequential":
        return SequentialScheduler()
    if kind == "reverse":
        return ReverseScheduler()
    if kind == "gradient_guided":
        return GradientGuidedScheduler(refresh_every)
    raise SchedulerError(f"unknown scheduler kind {kind!r}")


def next_block(scheduler, t, B, grad_info=None):
    if t < 0:
        raise SchedulerError(f"round must be >= 0, got {t}")
    return scheduler.next_block(t, B, grad_info)
