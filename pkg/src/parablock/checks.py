"""Protocol identities checked while an engine runs.

The central one: once a round's aggregate has been exchanged, every client's
copy of that block equals the server's, and both equal the initial model
plus ``eta`` times every aggregate applied to the block.  With staleness
``S`` a client may additionally hold its own not-yet-exchanged deltas, so
the general form is::

    client_j[b] == theta0[b] + eta * sum(applied aggregates on b)
                             + eta * sum(own pending deltas on b)
    server[b]   == theta0[b] + eta * sum(applied aggregates on b)   (bit-exact)
"""

from dataclasses import dataclass, replace

import numpy as np

from .engine import parablock_run, sequential_bcd
from .errors import InvariantViolation


def replay(theta0, log, partition, eta):
    """Rebuild the server model from the applied-delta log, in log order."""
    theta = np.array(theta0, dtype=np.float64, copy=True)
    for rec in log:
        theta[partition.slice(rec.block)] += eta * rec.delta
    return theta


def _scale(snap):
    m = max(float(np.max(np.abs(c))) for c in snap.clients)
    return max(1.0, m, float(np.max(np.abs(snap.server))))


@dataclass
class ConsistencyMonitor:
    """Observer that checks every round snapshot; keeps the first violation.

    With ``raise_on_violation`` the engine run is aborted at the first failure.
    """

    rtol: float = 1e-12
    check_aggregate: bool = True
    raise_on_violation: bool = False
    rounds_checked: int = 0
    max_rel_error: float = 0.0
    strict_checks: int = 0
    violation: InvariantViolation = None

    def _fail(self, msg, **ctx):
        err = InvariantViolation(msg, **ctx)
        if self.violation is None:
            self.violation = err
        if self.raise_on_violation:
            raise err

    def __call__(self, snap):
        self.rounds_checked += 1
        t, p, eta = snap.t, snap.partition, snap.eta

        if not np.array_equal(replay(snap.theta0, snap.log, p, eta), snap.server):
            self._fail(f"round {t}: server model differs from log replay", round=t)

        if self.check_aggregate and snap.pending:
            rec = snap.pending[-1]
            ids = sorted(rec.local)
            acc = rec.local[ids[0]].copy()
            for i in ids[1:]:
                acc += rec.local[i]
            if rec.aggregate.shape == acc.shape and not np.array_equal(acc / len(ids), rec.aggregate):
                self._fail(f"round {t}: aggregate is not the cohort mean", round=t, block=rec.block)

        scale = _scale(snap)
        own_pending = {}
        for rec in snap.pending:
            for j, dj in rec.local.items():
                key = (j, rec.block)
                own_pending[key] = own_pending.get(key, 0.0) + eta * dj

        for j, model in enumerate(snap.clients):
            for b in range(1, p.n_blocks + 1):
                sl = p.slice(b)
                expected = snap.server[sl] + own_pending.get((j, b), 0.0)
                err = float(np.max(np.abs(model[sl] - expected))) / scale
                self.max_rel_error = max(self.max_rel_error, err)
                if err > self.rtol:
                    self._fail(
                        f"round {t}: client {j} block {b} off the replay identity "
                        f"(rel. error {err:.3e})", round=t, client=j, block=b)

        # the literal S=1 statement: block b_{t-1} is consistent after round t
        if len(snap.pending) == 1 and snap.log and snap.log[-1].round == t - 1:
            b_prev = snap.log[-1].block
            if b_prev != snap.block:
                sl = p.slice(b_prev)
                self.strict_checks += 1
                for j, model in enumerate(snap.clients):
                    err = float(np.max(np.abs(model[sl] - snap.server[sl]))) / scale
                    if err > self.rtol:
                        self._fail(
                            f"round {t}: client {j} block {b_prev} (b_(t-1)) differs from the "
                            f"global model (rel. error {err:.3e})", round=t, client=j, block=b_prev)

    @property
    def ok(self):
        return self.violation is None


def final_consistency(result, rtol=1e-12):
    """After the final flush every client model equals the server model."""
    scale = max(1.0, float(np.max(np.abs(result.theta))))
    return max(float(np.max(np.abs(c - result.theta))) / scale for c in result.clients) <= rtol


def single_client_reduction(cfg, obj, theta0=None):
    """ParaBlock with one client must equal sequential BCD bit for bit."""
    one = replace(cfg, n_clients=1, participation=None)
    res = parablock_run(one, [obj], theta0)
    ref = sequential_bcd(one, obj, theta0)
    return np.array_equal(res.theta, ref), res.theta, ref


def run_battery(cfg, objs, theta0=None, *, correction_hook=None, rtol=1e-12):
    """Consistency, replay, aggregation and N=1 reduction on one instance.

    Returns ``(ok, messages, first_violation)``.
    """
    msgs = []
    mon = ConsistencyMonitor(rtol=rtol, check_aggregate=not (
        cfg.compression is not None and cfg.compression.compress_downlink))
    res = parablock_run(cfg, objs, theta0, observer=mon, correction_hook=correction_hook)
    msgs.append(f"consistency/replay: {mon.rounds_checked} rounds, "
                f"{mon.strict_checks} strict b_(t-1) checks, max rel. error {mon.max_rel_error:.2e}")
    violation = mon.violation
    if violation is None and not np.array_equal(replay(res.theta0, res.log, cfg.partition, cfg.eta), res.theta):
        violation = InvariantViolation("final model differs from log replay", round=cfg.rounds)
    if violation is None and not final_consistency(res, rtol):
        violation = InvariantViolation("clients disagree with the server after the final flush",
                                       round=cfg.rounds)
    if violation is None:
        trained = {rec.block for rec in res.log}
        for b in range(1, cfg.partition.n_blocks + 1):
            sl = cfg.partition.slice(b)
            if b not in trained and not all(np.array_equal(m[sl], res.theta0[sl])
                                            for m in [res.theta, *res.clients]):
                violation = InvariantViolation(f"block {b} was never trained but changed", block=b)
                break
        msgs.append(f"untouched blocks: {cfg.partition.n_blocks - len(trained)} never trained, unchanged")
    down = cfg.compression is not None and cfg.compression.compress_downlink
    if violation is None and not down:
        same, _, _ = single_client_reduction(cfg, objs[0], theta0)
        msgs.append(f"single-client reduction: {'bit-identical' if same else 'MISMATCH'}")
        if not same:
            violation = InvariantViolation("one-client run differs from sequential BCD")
    return violation is None, msgs, violation
