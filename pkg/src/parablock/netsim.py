"""Round-level wall-clock accounting for single-thread and overlapped protocols.

Timing is a pure function of link/compute specs and byte counts; nothing is
measured.  Bandwidths are bytes per second.

Single-thread round (FedBCD, FedCyBGD): compute, upload, the server waits
for the last upload, then broadcasts::

    max_i(compute_i + up_i) + max_i(down_i) + 2 * latency

Overlapped round (ParaBlock): the exchange of round ``t - S`` starts with the
round's computation; the round ends when both threads have finished on
every client::

    comm_i = max_j(up_prev_j) + latency + down_prev_i + latency
    max_i max(compute_i, comm_i)

ParaBlock additionally pays ``S`` communication-only flush rounds at the end.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import CohortError, ConfigError


@dataclass(frozen=True)
class LinkSpec:
    up_bw: object = 1e8
    down_bw: object = 1e8
    latency: float = 0.0

    def __post_init__(self):
        if np.any(np.asarray(self.up_bw) <= 0) or np.any(np.asarray(self.down_bw) <= 0):
            raise ConfigError("bandwidths must be > 0")
        if self.latency < 0:
            raise ConfigError("latency must be >= 0")

    def per_client(self, n):
        return (np.broadcast_to(np.asarray(self.up_bw, dtype=float), (n,)),
                np.broadcast_to(np.asarray(self.down_bw, dtype=float), (n,)))


@dataclass(frozen=True)
class ComputeSpec:
    """Seconds per local step at ``reference_batch``; scales linearly in batch size."""

    sec_per_local_step: object = 1.0
    batch_size: int = 4
    reference_batch: int = 4

    def __post_init__(self):
        if np.any(np.asarray(self.sec_per_local_step) <= 0):
            raise ConfigError("sec_per_local_step must be > 0")
        if self.batch_size <= 0 or self.reference_batch <= 0:
            raise ConfigError("batch sizes must be > 0")

    def step_seconds(self, n):
        s = np.broadcast_to(np.asarray(self.sec_per_local_step, dtype=float), (n,))
        return s * (self.batch_size / self.reference_batch)


@dataclass
class TimingTrace:
    compute_time: list = field(default_factory=list)
    comm_time: list = field(default_factory=list)
    round_wall: list = field(default_factory=list)
    cum_wall: list = field(default_factory=list)
    bytes_up: list = field(default_factory=list)
    bytes_down: list = field(default_factory=list)
    flush_time: float = 0.0

    @property
    def total(self):
        return (self.cum_wall[-1] if self.cum_wall else 0.0) + self.flush_time

    @property
    def total_compute(self):
        return float(sum(self.compute_time))

    @property
    def total_comm(self):
        return float(sum(self.comm_time)) + self.flush_time


def _arrays(*xs):
    arrs = [np.asarray(x, dtype=float).ravel() for x in xs]
    n = arrs[0].size
    if n == 0:
        raise CohortError("empty cohort")
    if any(a.size != n for a in arrs):
        raise CohortError("per-client arrays differ in length")
    return arrs


def round_time_singlethread(compute, upload, download, latency=0.0):
    c, u, d = _arrays(compute, upload, download)
    return float(np.max(c + u) + np.max(d) + 2 * latency)


def comm_finish_times(upload_prev, download_prev, latency=0.0):
    u, d = _arrays(upload_prev, download_prev)
    return np.max(u) + latency + d + latency


def round_time_parallel(compute, upload_prev=None, download_prev=None, latency=0.0):
    """Overlapped round; pass ``upload_prev=None`` for a round with no exchange."""
    (c,) = _arrays(compute)
    if upload_prev is None:
        return float(np.max(c))
    fin = comm_finish_times(upload_prev, download_prev, latency)
    if fin.size != c.size:
        raise CohortError("per-client arrays differ in length")
    return float(np.max(np.maximum(c, fin)))


def flush_time(upload_prev, download_prev, latency=0.0):
    return float(np.max(comm_finish_times(upload_prev, download_prev, latency)))


def simulate_timeline(method, traces, link, compute, *, n_clients, local_steps, staleness=1):
    """Per-round wall clock for an engine's round traces.

    Uses each trace's per-client ``upload_bytes`` / ``download_bytes`` and
    its participant list (only participants compute).
    """
    if method not in ("parablock", "fedbcd", "fedcybgd"):
        raise ConfigError(f"unknown method {method!r}")
    if not traces:
        raise ConfigError("no rounds to time")
    N = n_clients
    up_bw, down_bw = link.per_client(N)
    step_s = compute.step_seconds(N)
    lat = link.latency
    out = TimingTrace()

    def comp_of(tr):
        c = np.zeros(N)
        for i in tr.participants:
            c[i] = local_steps * step_s[i]
        return c

    def comm_of(tr):
        return (np.asarray(tr.upload_bytes, dtype=float) / up_bw,
                np.asarray(tr.download_bytes, dtype=float) / down_bw)

    cum = 0.0
    for t, tr in enumerate(traces):
        if len(tr.upload_bytes) != N or len(tr.download_bytes) != N:
            raise ConfigError(f"round {t}: byte vectors do not match {N} clients")
        c = comp_of(tr)
        if method == "parablock":
            if t >= staleness:
                u, d = comm_of(traces[t - staleness])
                wall = round_time_parallel(c, u, d, lat)
                comm = flush_time(u, d, lat)
            else:
                wall = round_time_parallel(c)
                comm = 0.0
        else:
            u, d = comm_of(tr)
            wall = round_time_singlethread(c, u, d, lat)
            comm = float(np.max(u) + np.max(d) + 2 * lat)
        cum += wall
        out.compute_time.append(float(np.max(c)))
        out.comm_time.append(comm)
        out.round_wall.append(wall)
        out.cum_wall.append(cum)
        out.bytes_up.append(tr.bytes_up)
        out.bytes_down.append(tr.bytes_down)

    if method == "parablock":
        for tr in traces[max(0, len(traces) - staleness):]:
            out.flush_time += flush_time(*comm_of(tr), lat)
    return out


def attach_timing(traces, timing):
    """Copy a :class:`TimingTrace` into the engine's round traces in place."""
    for tr, comp, comm, wall, cum in zip(traces, timing.compute_time, timing.comm_time,
                                         timing.round_wall, timing.cum_wall):
        tr.compute_time, tr.comm_time, tr.round_wall, tr.cum_wall = comp, comm, wall, cum
    return traces


def homogeneous_totals(p, c, T):
    """Closed forms for latency-free homogeneous rounds: ``(parablock, fedbcd)``."""
    return p + (T - 1) * max(p, c) + c, T * (p + c)
