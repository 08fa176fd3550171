"""Synthetic client objectives with analytic gradients.

Three kinds are provided:

* :class:`QuadraticObjective` -- ``0.5 (x - c)^T diag(a) (x - c)``, the
  workhorse for exact identities and bound checks (L, sigma_g closed form).
* :class:`LogisticObjective` -- multinomial logistic regression with a
  reference class (logit of class 0 fixed at zero), no bias.
* :class:`MLPObjective` -- one tanh hidden layer, softmax output.

Every objective may add Gaussian noise to its gradient.  The noise has
per-coordinate std ``sigma / sqrt(d)`` so that
``E||g(x; xi) - grad f(x)||^2 == sigma^2`` exactly.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import BatchError, NumericError, PartitionError, ShapeError
from .rng import stream


class Objective:
    kind = "abstract"

    def __init__(self, dim, *, client_id=0, noise_sigma=0.0):
        if noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
        self.dim = int(dim)
        self.client_id = int(client_id)
        self.noise_sigma = float(noise_sigma)

    n_samples = None

    def _check(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise ShapeError(f"{self.kind} objective expects shape ({self.dim},), got {theta.shape}")
        return theta

    def loss(self, theta, batch=None):
        raise NotImplementedError

    def _exact_grad(self, theta, batch):
        raise NotImplementedError

    def grad(self, theta, batch=None, rng=None):
        """Gradient at ``theta`` over ``batch`` (``None`` = all samples).

        Noise is added only when ``rng`` is given and ``noise_sigma > 0``.
        """
        theta = self._check(theta)
        g = self._exact_grad(theta, batch)
        if rng is not None and self.noise_sigma > 0:
            g = g + (self.noise_sigma / np.sqrt(self.dim)) * rng.standard_normal(self.dim)
        return g

    def layer_dims(self):
        return [self.dim]


class QuadraticObjective(Objective):
    kind = "quadratic"

    def __init__(self, center, curvature, *, client_id=0, noise_sigma=0.0):
        center = np.asarray(center, dtype=np.float64)
        curvature = np.broadcast_to(np.asarray(curvature, dtype=np.float64), center.shape).copy()
        if center.ndim != 1:
            raise ShapeError("center must be 1-D")
        if np.any(curvature < 0):
            raise ValueError("curvature entries must be >= 0")
        super().__init__(center.shape[0], client_id=client_id, noise_sigma=noise_sigma)
        self.center = center
        self.curvature = curvature

    def loss(self, theta, batch=None):
        r = self._check(theta) - self.center
        return 0.5 * float(np.dot(r, self.curvature * r))

    def _exact_grad(self, theta, batch):
        return self.curvature * (theta - self.center)


def _softmax_xent(logits, y):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    s = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(s)
    n = logits.shape[0]
    loss = -logp[np.arange(n), y].mean()
    dlogits = ez / s
    dlogits[np.arange(n), y] -= 1.0
    return float(loss), dlogits / n


class _DataObjective(Objective):
    def __init__(self, features, labels, n_classes, dim, *, client_id=0, noise_sigma=0.0):
        X = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ShapeError(f"features {X.shape} and labels {y.shape} disagree")
        if X.shape[0] == 0:
            raise BatchError("objective has no samples")
        super().__init__(dim, client_id=client_id, noise_sigma=noise_sigma)
        self.X = X
        self.y = y
        self.n_classes = int(n_classes)

    @property
    def n_samples(self):
        return self.X.shape[0]

    def _batch(self, batch):
        if batch is None:
            return self.X, self.y
        idx = np.asarray(batch, dtype=np.int64)
        if idx.size == 0:
            raise BatchError("empty batch")
        return self.X[idx], self.y[idx]


class LogisticObjective(_DataObjective):
    """Softmax regression, ``logits = [0, X W]`` with ``W`` of shape ``(p, C-1)``."""

    kind = "logistic"

    def __init__(self, features, labels, n_classes, *, client_id=0, noise_sigma=0.0):
        p = np.shape(features)[1]
        super().__init__(features, labels, n_classes, p * (n_classes - 1),
                         client_id=client_id, noise_sigma=noise_sigma)

    def _logits(self, theta, X):
        W = theta.reshape(X.shape[1], self.n_classes - 1)
        return np.concatenate([np.zeros((X.shape[0], 1)), X @ W], axis=1)

    def loss(self, theta, batch=None):
        X, y = self._batch(batch)
        return _softmax_xent(self._logits(self._check(theta), X), y)[0]

    def _exact_grad(self, theta, batch):
        X, y = self._batch(batch)
        _, dlog = _softmax_xent(self._logits(theta, X), y)
        return (X.T @ dlog[:, 1:]).ravel()


class MLPObjective(_DataObjective):
    """``softmax(tanh(X W1 + b1) W2 + b2)``; parameters packed W1, b1, W2, b2."""

    kind = "mlp"

    def __init__(self, features, labels, n_classes, hidden, *, client_id=0, noise_sigma=0.0):
        p = np.shape(features)[1]
        self.n_in = p
        self.hidden = int(hidden)
        dim = p * hidden + hidden + hidden * n_classes + n_classes
        super().__init__(features, labels, n_classes, dim, client_id=client_id, noise_sigma=noise_sigma)

    def layer_dims(self):
        return [self.n_in * self.hidden + self.hidden, self.hidden * self.n_classes + self.n_classes]

    def unpack(self, theta):
        p, h, C = self.n_in, self.hidden, self.n_classes
        i = 0
        W1 = theta[i:i + p * h].reshape(p, h); i += p * h
        b1 = theta[i:i + h]; i += h
        W2 = theta[i:i + h * C].reshape(h, C); i += h * C
        b2 = theta[i:i + C]
        return W1, b1, W2, b2

    def loss(self, theta, batch=None):
        X, y = self._batch(batch)
        W1, b1, W2, b2 = self.unpack(self._check(theta))
        H = np.tanh(X @ W1 + b1)
        return _softmax_xent(H @ W2 + b2, y)[0]

    def _exact_grad(self, theta, batch):
        X, y = self._batch(batch)
        W1, b1, W2, b2 = self.unpack(theta)
        H = np.tanh(X @ W1 + b1)
        _, dlog = _softmax_xent(H @ W2 + b2, y)
        dH = (dlog @ W2.T) * (1.0 - H * H)
        return np.concatenate([
            (X.T @ dH).ravel(), dH.sum(axis=0),
            (H.T @ dlog).ravel(), dlog.sum(axis=0),
        ])


class BatchSampler:
    """Minibatches without replacement, reshuffled at every epoch boundary."""

    def __init__(self, n, batch_size, rng):
        if n < 1:
            raise BatchError("cannot sample from an empty dataset")
        self.n = int(n)
        self.batch_size = min(int(batch_size), self.n)
        self.rng = rng
        self._perm = rng.permutation(self.n)
        self._pos = 0

    def next(self):
        if self._pos + self.batch_size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        out = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return out


# --- aggregate quantities ------------------------------------------------

def global_loss(objs, theta):
    return float(sum(o.loss(theta) for o in objs) / len(objs))


def global_grad(objs, theta):
    g = np.zeros(objs[0].dim)
    for o in objs:
        g += o.grad(theta)
    return g / len(objs)


def estimate_sigma_g(objs, theta):
    """``(1/N) sum_i ||grad f_i(theta) - grad f(theta)||^2`` with exact gradients."""
    dims = {o.dim for o in objs}
    if len(dims) != 1:
        raise ShapeError(f"objectives disagree on dimension: {sorted(dims)}")
    grads = np.stack([o.grad(theta) for o in objs])
    dev = grads - grads.mean(axis=0)
    return float(np.mean(np.sum(dev * dev, axis=1)))


def quadratic_minimum(objs):
    """Minimiser and minimum of the average of diagonal quadratics."""
    A = np.stack([o.curvature for o in objs])
    C = np.stack([o.center for o in objs])
    total = A.sum(axis=0)
    theta = np.where(total > 0, (A * C).sum(axis=0) / np.where(total > 0, total, 1.0), 0.0)
    return theta, global_loss(objs, theta)


def _hvp(obj, theta, v, h=1e-5):
    return (obj.grad(theta + h * v) - obj.grad(theta - h * v)) / (2 * h)


def hessian_top_eigenvalue(obj, theta, *, iters=100, seed=0):
    """Power iteration on finite-difference Hessian-vector products."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(obj.dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = _hvp(obj, theta, v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        lam = float(np.dot(v, w))
        v = w / nw
    return abs(lam)


def smoothness_constant(objs, *, seed=0, probes=5):
    """Return ``(L, kind)`` where kind is ``"exact"``, ``"bound"`` or ``"estimate"``.

    Logistic uses ``c * max_j ||x_j||^2`` with ``c = 1/4`` for two classes and
    ``1/2`` otherwise (largest eigenvalue of ``diag(p) - p p^T``).  MLP runs
    power iteration at a few random points and takes the largest value.
    """
    kinds = {o.kind for o in objs}
    if len(kinds) != 1:
        raise ValueError(f"mixed objective kinds: {sorted(kinds)}")
    kind = kinds.pop()
    if kind == "quadratic":
        return float(max(o.curvature.max() for o in objs)), "exact"
    if kind == "logistic":
        c = 0.25 if objs[0].n_classes == 2 else 0.5
        r2 = max(float(np.max(np.sum(o.X * o.X, axis=1))) for o in objs)
        return c * r2, "bound"
    rng = np.random.default_rng(seed)
    est = 0.0
    for o in objs:
        for k in range(probes):
            theta = 0.5 * rng.standard_normal(o.dim)
            est = max(est, hessian_top_eigenvalue(o, theta, seed=seed + k))
    return est, "estimate"


# --- data ------------------------------------------------------------------

@dataclass
class SyntheticDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    @property
    def n_samples(self):
        return self.features.shape[0]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.n_classes)

    def to_csv(self, path):
        p = self.features.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"feature_{j}" for j in range(p)] + ["label"])
            for x, y in zip(self.features, self.labels):
                w.writerow([format(v, ".17g") for v in x] + [int(y)])

    @classmethod
    def from_csv(cls, path, n_classes=None):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if header[-1] != "label" or any(h != f"feature_{j}" for j, h in enumerate(header[:-1])):
            raise ValueError(f"unexpected CSV header: {header}")
        X = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), len(header) - 1)
        y = np.array([int(r[-1]) for r in body], dtype=np.int64)
        C = int(n_classes) if n_classes is not None else int(y.max()) + 1
        return cls(X, y, C)


def make_classification(n, n_features, n_classes, *, seed=0, separation=2.0, unit_norm=False):
    """Gaussian blobs, one mean per class, balanced labels."""
    rng = np.random.default_rng(seed)
    means = separation * rng.standard_normal((n_classes, n_features)) / np.sqrt(n_features)
    y = np.arange(n) % n_classes
    rng.shuffle(y)
    X = means[y] + rng.standard_normal((n, n_features)) / np.sqrt(n_features)
    if unit_norm:
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    return SyntheticDataset(X, y.astype(np.int64), n_classes)


@dataclass
class DirichletPartition:
    alpha: float
    n_clients: int
    assignment: np.ndarray
    redraws: int = 0
    fallback: bool = False

    def client_indices(self, i):
        return np.flatnonzero(self.assignment == i)

    def counts(self):
        return np.bincount(self.assignment, minlength=self.n_clients)

    def class_histogram(self, labels, n_classes):
        H = np.zeros((self.n_clients, n_classes), dtype=np.int64)
        np.add.at(H, (self.assignment, labels), 1)
        return H


def _dirichlet_draw(labels, n_classes, alpha, N, rng):
    assignment = np.empty(labels.shape[0], dtype=np.int64)
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        props = rng.dirichlet(np.full(N, alpha))
        cuts = np.rint(np.cumsum(props) * idx.size).astype(np.int64)
        cuts[-1] = idx.size
        start = 0
        for i, end in enumerate(cuts):
            assignment[idx[start:end]] = i
            start = max(start, end)
    return assignment


def dirichlet_partition(ds, alpha, n_clients, seed, *, max_redraws=100):
    """Label-skewed split: per class, client shares ~ Dirichlet(alpha * 1_N).

    Draws are repeated until no client is empty (up to ``max_redraws``);
    after that, each empty client takes one sample from the currently
    largest client, in client order.
    """
    if alpha <= 0:
        raise PartitionError(f"alpha must be > 0, got {alpha}")
    N = int(n_clients)
    n = ds.n_samples
    if N < 1:
        raise PartitionError("need at least one client")
    if n == 0:
        raise PartitionError("dataset is empty")
    if N > n:
        raise PartitionError(f"{N} clients but only {n} samples")
    rng = np.random.default_rng(seed)
    for attempt in range(max_redraws + 1):
        a = _dirichlet_draw(ds.labels, ds.n_classes, alpha, N, rng)
        if np.all(np.bincount(a, minlength=N) > 0):
            return DirichletPartition(float(alpha), N, a, redraws=attempt)
    counts = np.bincount(a, minlength=N)
    for i in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        j = np.flatnonzero(a == donor)[0]
        a[j] = i
        counts[donor] -= 1
        counts[i] += 1
    return DirichletPartition(float(alpha), N, a, redraws=max_redraws, fallback=True)


# --- suites ------------------------------------------------------------------

def quadratic_suite(n_clients, dim, *, seed=0, curvature=(0.5, 1.0), shared_curvature=True,
                    center_spread=1.0, sigma_g=None, noise_sigma=0.0, identical=False):
    """Heterogeneous diagonal quadratics.

    Centers are ``N(0, center_spread^2 I)``.  When ``sigma_g`` is given and the
    curvature is shared, the deviations of the centers from their mean are
    rescaled so that the heterogeneity equals ``sigma_g^2`` at every point
    (the gradient gaps ``A (c_bar - c_i)`` do not depend on theta).
    """
    rng = stream(seed, tag="quadratic-suite")
    lo, hi = curvature
    n_curv = 1 if (shared_curvature or identical) else n_clients
    A = rng.uniform(lo, hi, size=(n_curv, dim))
    if identical:
        C = np.repeat(center_spread * rng.standard_normal((1, dim)), n_clients, axis=0)
    else:
        C = center_spread * rng.standard_normal((n_clients, dim))
    if sigma_g is not None and not identical and n_clients > 1:
        if not shared_curvature:
            raise ValueError("exact sigma_g targeting needs shared curvature")
        mean = C.mean(axis=0)
        dev = A[0] * (C - mean)
        cur = np.sqrt(np.mean(np.sum(dev * dev, axis=1)))
        C = mean + (C - mean) * (sigma_g / cur if cur > 0 else 0.0)
    return [QuadraticObjective(C[i], A[0] if n_curv == 1 else A[i], client_id=i, noise_sigma=noise_sigma)
            for i in range(n_clients)]


def data_suite(kind, n_clients, *, n_samples=400, n_features=8, n_classes=4, hidden=8,
               alpha=0.5, seed=0, noise_sigma=0.0):
    """Logistic or MLP client objectives over a Dirichlet-split synthetic dataset."""
    ds = make_classification(n_samples, n_features, n_classes, seed=seed)
    part = dirichlet_partition(ds, alpha, n_clients, seed)
    objs = []
    for i in range(n_clients):
        idx = part.client_indices(i)
        X, y = ds.features[idx], ds.labels[idx]
        if kind == "logistic":
            objs.append(LogisticObjective(X, y, n_classes, client_id=i, noise_sigma=noise_sigma))
        elif kind == "mlp":
            objs.append(MLPObjective(X, y, n_classes, hidden, client_id=i, noise_sigma=noise_sigma))
        else:
            raise ValueError(f"unknown data objective kind {kind!r}")
    return objs, ds, part


def check_finite(x, what, **ctx):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what}", **ctx)
    return x


def finite_difference_grad(obj, theta, h=1e-5):
    """Central differences of the full-batch loss, one coordinate at a time."""
    theta = np.array(theta, dtype=np.float64)
    g = np.empty_like(theta)
    for j in range(theta.size):
        e = theta[j]
        theta[j] = e + h
        fp = obj.loss(theta)
        theta[j] = e - h
        fm = obj.loss(theta)
        theta[j] = e
        g[j] = (fp - fm) / (2 * h)
    return g


def gradient_rel_error(obj, theta, h=1e-5):
    ga = obj.grad(theta)
    gf = finite_difference_grad(obj, theta, h)
    return float(np.linalg.norm(ga - gf) / max(np.linalg.norm(gf), 1e-12))
