"""Exception hierarchy shared by every module."""


class ParaBlockError(Exception):
    """Base class for all package errors."""


class PartitionError(ParaBlockError, ValueError):
    """Invalid block partition or block id."""


class ShapeError(ParaBlockError, ValueError):
    """Dimension mismatch between vectors, partitions or objectives."""


class BatchError(ParaBlockError, ValueError):
    """Empty or out-of-range sample batch."""


class SchedulerError(ParaBlockError, ValueError):
    pass


class ConfigError(ParaBlockError, ValueError):
    pass


class ScheduleError(ParaBlockError, ValueError):
    """No feasible learning-rate schedule could be found."""


class CohortError(ParaBlockError, ValueError):
    pass


class TraceError(ParaBlockError, ValueError):
    pass


class NumericError(ParaBlockError, ArithmeticError):
    """A loss, gradient or update became non-finite.

    Carries whatever context was known where it was raised; the engine
    fills in ``round`` and ``client`` while the error propagates.
    """

    def __init__(self, message, *, step=None, round=None, client=None):
        self.message = message
        self.step = step
        self.round = round
        self.client = client
        super().__init__(self._render())

    def _render(self):
        ctx = [f"{k}={v}" for k, v in
               (("round", self.round), ("client", self.client), ("step", self.step))
               if v is not None]
        return f"{self.message} ({', '.join(ctx)})" if ctx else self.message

    def with_context(self, **kw):
        for k, v in kw.items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        self.args = (self._render(),)
        return self


class InvariantViolation(ParaBlockError, AssertionError):
    """A protocol identity failed; carries the round/client/block of the failure."""

    def __init__(self, message, *, round=None, client=None, block=None):
        self.round = round
        self.client = client
        self.block = block
        super().__init__(message)
