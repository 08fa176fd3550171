"""Random problem instances shared by the test modules."""

import numpy as np

from parablock.engine import FedConfig, RoundTrace
from parablock.local_opt import AdamWConfig, SgdConfig
from parablock.objectives import data_suite, quadratic_suite
from parablock.params import make_partition


def random_instance(rng, *, n_range=(1, 8), b_range=(1, 6), k_range=(1, 5), t_range=(2, 20),
                    kinds=("quadratic", "quadratic", "logistic", "mlp"), **overrides):
    """Draw ``(cfg, objs, theta0)`` with a random objective kind, optimizer and noise level."""
    N = int(rng.integers(n_range[0], n_range[1] + 1))
    B = int(rng.integers(b_range[0], b_range[1] + 1))
    K = int(rng.integers(k_range[0], k_range[1] + 1))
    T = int(rng.integers(t_range[0], t_range[1] + 1))
    sigma = float(rng.choice([0.0, 0.1]))
    seed = int(rng.integers(0, 2**31))
    kind = str(rng.choice(kinds))
    if kind == "quadratic":
        objs = quadratic_suite(N, int(rng.integers(B, 3 * B + 4)), seed=seed, noise_sigma=sigma)
    else:
        objs, _, _ = data_suite(kind, N, n_samples=12 * N + 24, n_features=4, n_classes=3,
                                hidden=4, alpha=1.0, seed=seed, noise_sigma=sigma)
    d = objs[0].dim
    opt = SgdConfig(0.05) if rng.random() < 0.5 else AdamWConfig(0.01, weight_decay=float(rng.choice([0.0, 0.01])))
    kw = dict(n_clients=N, rounds=T, local_steps=K, eta=float(rng.uniform(0.5, 1.5)), optimizer=opt,
              partition=make_partition(d, equal=min(B, d)),
              scheduler=str(rng.choice(["random", "sequential", "reverse", "gradient_guided"])),
              batch_size=int(rng.integers(1, 6)), seed=seed)
    kw.update(overrides)
    theta0 = 0.5 * np.random.default_rng(seed).standard_normal(d)
    return FedConfig(**kw), objs, theta0


def homogeneous_traces(T, n_clients, up_bytes, down_bytes):
    """Round traces with every client uploading and downloading fixed byte counts."""
    return [RoundTrace(round=t, block_id=1, train_loss=0.0, block_grad_norm_sq=0.0, delta_norm_sq=0.0,
                       mean_client_delta_norm_sq=0.0, bytes_up=up_bytes * n_clients,
                       bytes_down=down_bytes * n_clients, participants=tuple(range(n_clients)),
                       upload_bytes=(up_bytes,) * n_clients, download_bytes=(down_bytes,) * n_clients)
            for t in range(T)]
