"""Federated block-coordinate engines.

All engines run as a deterministic round loop.  ParaBlock's compute and
communication threads are not executed concurrently: within round ``t`` the
numbers produced by the communication thread (the aggregate of round
``t - S``) do not depend on round ``t``'s computation, so evaluating them in
sequence gives exactly the values the two-thread schedule would.  Wall-clock
effects of the overlap are modelled separately in :mod:`parablock.netsim`.
"""

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .compression import TopKConfig, topk_roundtrip
from .errors import NumericError
from .local_opt import AdamWConfig, SgdConfig, make_stepper
from .objectives import BatchSampler, global_grad, global_loss
from .params import BlockPartition
from .rng import stream
from .schedulers import make_scheduler

WIRE_BYTES_PER_PARAM = 4
METHODS = ("parablock", "fedbcd", "fedcybgd")


@dataclass(frozen=True)
class FedConfig:
    n_clients: int
    rounds: int
    local_steps: int
    eta: float
    optimizer: object
    partition: BlockPartition
    scheduler: str = "random"
    refresh_every: int = None
    staleness: int = 1
    participation: int = None
    compression: TopKConfig = None
    batch_size: int = 4
    seed: int = 0
    full_broadcast: bool = False

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError(f"n_clients must be >= 1, got {self.n_clients}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.local_steps < 1:
            raise ValueError(f"local_steps must be >= 1, got {self.local_steps}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0 <= self.staleness <= self.rounds:
            raise ValueError(f"staleness must be in [0, rounds], got {self.staleness}")
        if self.participation is not None and not 1 <= self.participation <= self.n_clients:
            raise ValueError(f"participation must be in [1, n_clients], got {self.participation}")
        if not isinstance(self.optimizer, (SgdConfig, AdamWConfig)):
            raise TypeError("optimizer must be SgdConfig or AdamWConfig")

    @property
    def cohort_size(self):
        return self.participation or self.n_clients


@dataclass
class RoundTrace:
    round: int
    block_id: int
    train_loss: float
    block_grad_norm_sq: float
    delta_norm_sq: float
    mean_client_delta_norm_sq: float
    bytes_up: int
    bytes_down: int
    compute_time: float = 0.0
    comm_time: float = 0.0
    round_wall: float = 0.0
    cum_wall: float = 0.0
    participants: tuple = ()
    upload_bytes: tuple = ()
    download_bytes: tuple = ()


@dataclass(frozen=True)
class AppliedDelta:
    round: int
    block: int
    delta: np.ndarray


@dataclass
class PendingRound:
    """A round whose aggregate has been computed but not yet exchanged."""

    round: int
    block: int
    aggregate: np.ndarray
    local: dict


@dataclass
class RoundSnapshot:
    """State handed to observers at the end of round ``t``.

    ``server`` is the global model after the server update of round ``t``;
    ``clients`` are the local models that will start round ``t + 1``.
    """

    t: int
    block: int
    server: np.ndarray
    clients: list
    pending: list
    log: list
    theta0: np.ndarray
    eta: float
    partition: BlockPartition


@dataclass
class RunResult:
    method: str
    theta: np.ndarray
    traces: list
    log: list
    clients: list
    theta0: np.ndarray
    config: FedConfig
    flush_bytes: tuple = field(default=())


def local_block_training(theta_start, partition, b, K, opt_cfg, obj, rng=None, sampler=None):
    """Run ``K`` optimizer steps on block ``b`` only; return the block delta."""
    theta = np.array(theta_start, dtype=np.float64, copy=True)
    sl = partition.slice(b)
    step = make_stepper(opt_cfg, sl.stop - sl.start)
    for k in range(K):
        batch = sampler.next() if sampler is not None else None
        try:
            g = obj.grad(theta, batch, rng)
            theta[sl] = step(theta[sl], g[sl])
        except NumericError as e:
            raise e.with_context(step=k)
    return theta[sl] - theta_start[sl]


def _samplers(cfg, objs):
    return [BatchSampler(o.n_samples, cfg.batch_size, stream(cfg.seed, client=i, tag="batches"))
            if o.n_samples is not None else None
            for i, o in enumerate(objs)]


def _cohort(cfg, t):
    if cfg.participation is None or cfg.participation == cfg.n_clients:
        return list(range(cfg.n_clients))
    pick = stream(cfg.seed, round=t, tag="cohort").choice(cfg.n_clients, cfg.participation, replace=False)
    return sorted(int(i) for i in pick)


def _train_client(cfg, objs, samplers, theta, b, t, i):
    try:
        delta = local_block_training(theta, cfg.partition, b, cfg.local_steps, cfg.optimizer, objs[i],
                                     rng=stream(cfg.seed, client=i, round=t, tag="noise"),
                                     sampler=samplers[i])
    except NumericError as e:
        raise e.with_context(round=t, client=i)
    return topk_roundtrip(delta, cfg.compression)


def _mean(deltas, ids):
    """Flat mean in ascending client-id order."""
    acc = deltas[ids[0]].copy()
    for i in ids[1:]:
        acc += deltas[i]
    return acc / len(ids)


def _measure(cfg, objs, theta, b, t):
    loss = global_loss(objs, theta)
    g = global_grad(objs, theta)[cfg.partition.slice(b)]
    gn = float(np.dot(g, g))
    if not (np.isfinite(loss) and np.isfinite(gn)):
        raise NumericError("non-finite global loss or gradient", round=t)
    return loss, gn


def _pick_block(cfg, sched, objs, theta, t):
    info = None
    if sched.needs_gradient(t):
        info = (global_grad(objs, theta), cfg.partition)
    return sched.next_block(t, cfg.partition.n_blocks, info)


def _block_bytes(cfg, b):
    return cfg.partition.block_size(b) * WIRE_BYTES_PER_PARAM


def _downlink(cfg, agg, b):
    if cfg.compression is not None and cfg.compression.compress_downlink:
        return topk_roundtrip(agg, cfg.compression)
    return agg, _block_bytes(cfg, b)


def _trace(cfg, t, b, loss, gn, agg, deltas, cohort, up, down):
    return RoundTrace(
        round=t, block_id=b, train_loss=loss, block_grad_norm_sq=gn,
        delta_norm_sq=float(np.dot(agg, agg)),
        mean_client_delta_norm_sq=float(np.mean([np.dot(deltas[i], deltas[i]) for i in cohort])),
        bytes_up=int(sum(up)), bytes_down=int(sum(down)),
        participants=tuple(cohort), upload_bytes=tuple(up), download_bytes=tuple(down),
    )


def _init(cfg, objs, theta0):
    if len(objs) != cfg.n_clients:
        raise ValueError(f"{len(objs)} objectives for {cfg.n_clients} clients")
    d = cfg.partition.dim
    theta0 = np.zeros(d) if theta0 is None else np.array(theta0, dtype=np.float64, copy=True)
    if theta0.shape != (d,) or any(o.dim != d for o in objs):
        raise ValueError(f"objectives / initial model do not match partition dimension {d}")
    return theta0


def parablock_run(cfg, objs, theta0=None, *, observer=None, correction_hook=None):
    """ParaBlock with staleness ``cfg.staleness`` (1 = the standard protocol).

    Round ``t``: the server applies the aggregate of round ``t - S``; every
    participant trains block ``b_t`` from its local model and adds
    ``eta * delta_i`` to it; then every client replaces its own stale
    contribution to block ``b_{t-S}`` with the aggregate,
    ``+= eta * (aggregate - delta_i)`` (``delta_i = 0`` for clients that did
    not take part in round ``t - S``).  Pending aggregates are flushed to the
    server (and clients) after the last round.

    ``correction_hook(t, client, block, correction) -> correction`` exists
    for fault-injection tests.
    """
    if cfg.staleness == 0:
        return fedbcd_run(cfg, objs, theta0, observer=observer)
    theta0 = _init(cfg, objs, theta0)
    S, eta, N = cfg.staleness, cfg.eta, cfg.n_clients
    server = theta0.copy()
    clients = [theta0.copy() for _ in range(N)]
    samplers = _samplers(cfg, objs)
    sched = make_scheduler(cfg.scheduler, seed=cfg.seed, refresh_every=cfg.refresh_every)
    pending = deque()
    log, traces = [], []

    def exchange(rec, t):
        sl = cfg.partition.slice(rec.block)
        server[sl] += eta * rec.aggregate
        log.append(AppliedDelta(rec.round, rec.block, rec.aggregate))
        return sl

    def correct(rec, sl, t):
        for j in range(N):
            own = rec.local.get(j)
            corr = eta * rec.aggregate if own is None else eta * (rec.aggregate - own)
            if correction_hook is not None:
                corr = correction_hook(t, j, rec.block, corr)
            clients[j][sl] += corr

    for t in range(cfg.rounds):
        rec = pending.popleft() if t >= S else None
        sl_prev = exchange(rec, t) if rec is not None else None

        b = _pick_block(cfg, sched, objs, server, t)
        loss, gn = _measure(cfg, objs, server, b, t)
        cohort = _cohort(cfg, t)

        deltas, up = {}, []
        for i in cohort:
            deltas[i], nbytes = _train_client(cfg, objs, samplers, clients[i], b, t, i)
            up.append(_block_bytes(cfg, b) if nbytes is None else nbytes)
        agg, down_bytes = _downlink(cfg, _mean(deltas, cohort), b)

        sl = cfg.partition.slice(b)
        for i in cohort:
            clients[i][sl] += eta * deltas[i]
        if rec is not None:
            correct(rec, sl_prev, t)
        pending.append(PendingRound(t, b, agg, deltas))

        up_all = tuple(up[cohort.index(i)] if i in deltas else 0 for i in range(N))
        traces.append(_trace(cfg, t, b, loss, gn, agg, deltas, cohort, up_all, (down_bytes,) * N))
        if observer is not None:
            observer(RoundSnapshot(t, b, server, clients, list(pending), log, theta0, eta, cfg.partition))

    while pending:
        rec = pending.popleft()
        correct(rec, exchange(rec, cfg.rounds), cfg.rounds)

    return RunResult("parablock", server, traces, log, clients, theta0, cfg)


def fedbcd_run(cfg, objs, theta0=None, *, observer=None):
    """Synchronous federated BCD: train ``b_t`` from the current global model,
    average, apply, broadcast."""
    theta0 = _init(cfg, objs, theta0)
    eta, N = cfg.eta, cfg.n_clients
    theta = theta0.copy()
    samplers = _samplers(cfg, objs)
    sched = make_scheduler(cfg.scheduler, seed=cfg.seed, refresh_every=cfg.refresh_every)
    log, traces = [], []
    for t in range(cfg.rounds):
        b = _pick_block(cfg, sched, objs, theta, t)
        loss, gn = _measure(cfg, objs, theta, b, t)
        cohort = _cohort(cfg, t)
        deltas, up = {}, []
        for i in cohort:
            deltas[i], nbytes = _train_client(cfg, objs, samplers, theta, b, t, i)
            up.append(_block_bytes(cfg, b) if nbytes is None else nbytes)
        agg, down_bytes = _downlink(cfg, _mean(deltas, cohort), b)
        theta[cfg.partition.slice(b)] += eta * agg
        log.append(AppliedDelta(t, b, agg))
        up_all = tuple(up[cohort.index(i)] if i in deltas else 0 for i in range(N))
        traces.append(_trace(cfg, t, b, loss, gn, agg, deltas, cohort, up_all, (down_bytes,) * N))
        if observer is not None:
            observer(RoundSnapshot(t, b, theta, [theta] * N, [], log, theta0, eta, cfg.partition))
    return RunResult("fedbcd", theta, traces, log, [theta.copy() for _ in range(N)], theta0, cfg)


def fedcybgd_run(cfg, objs, theta0=None, *, observer=None):
    """Cyclic BCD: client ``t mod N`` alone trains ``b_t``; its delta is applied
    without averaging and the updated block (or whole model with
    ``full_broadcast``) is pushed to every client."""
    theta0 = _init(cfg, objs, theta0)
    eta, N = cfg.eta, cfg.n_clients
    theta = theta0.copy()
    samplers = _samplers(cfg, objs)
    sched = make_scheduler(cfg.scheduler, seed=cfg.seed, refresh_every=cfg.refresh_every)
    log, traces = [], []
    for t in range(cfg.rounds):
        b = _pick_block(cfg, sched, objs, theta, t)
        loss, gn = _measure(cfg, objs, theta, b, t)
        i = t % N
        delta, nbytes = _train_client(cfg, objs, samplers, theta, b, t, i)
        theta[cfg.partition.slice(b)] += eta * delta
        log.append(AppliedDelta(t, b, delta))
        up = tuple((_block_bytes(cfg, b) if nbytes is None else nbytes) if j == i else 0 for j in range(N))
        down = cfg.partition.dim * WIRE_BYTES_PER_PARAM if cfg.full_broadcast else _block_bytes(cfg, b)
        traces.append(_trace(cfg, t, b, loss, gn, delta, {i: delta}, [i], up, (down,) * N))
        if observer is not None:
            observer(RoundSnapshot(t, b, theta, [theta] * N, [], log, theta0, eta, cfg.partition))
    return RunResult("fedcybgd", theta, traces, log, [theta.copy() for _ in range(N)], theta0, cfg)


def sequential_bcd(cfg, obj, theta0=None, *, client_id=0):
    """Single-process BCD reference: ``theta[b_t] += eta * delta_t``.

    Uses the same scheduler and random streams as client ``client_id`` of
    the federated engines.
    """
    d = cfg.partition.dim
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=np.float64, copy=True)
    sampler = (BatchSampler(obj.n_samples, cfg.batch_size, stream(cfg.seed, client=client_id, tag="batches"))
               if obj.n_samples is not None else None)
    sched = make_scheduler(cfg.scheduler, seed=cfg.seed, refresh_every=cfg.refresh_every)
    for t in range(cfg.rounds):
        info = (obj.grad(theta), cfg.partition) if sched.needs_gradient(t) else None
        b = sched.next_block(t, cfg.partition.n_blocks, info)
        delta = local_block_training(theta, cfg.partition, b, cfg.local_steps, cfg.optimizer, obj,
                                     rng=stream(cfg.seed, client=client_id, round=t, tag="noise"),
                                     sampler=sampler)
        delta, _ = topk_roundtrip(delta, cfg.compression)
        theta[cfg.partition.slice(b)] += cfg.eta * delta
    return theta


ENGINES = {"parablock": parablock_run, "fedbcd": fedbcd_run, "fedcybgd": fedcybgd_run}


def run(method, cfg, objs, theta0=None, **kw):
    try:
        engine = ENGINES[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}") from None
    return engine(cfg, objs, theta0, **kw)
