"""Run configuration: a TOML file validated with pydantic (unknown keys rejected)."""

import sys
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .compression import TopKConfig
from .engine import FedConfig
from .errors import ConfigError
from .local_opt import AdamWConfig, SgdConfig
from .netsim import ComputeSpec, LinkSpec
from .objectives import data_suite, quadratic_suite
from .params import make_partition

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FederationSection(_Section):
    n_clients: int = Field(4, ge=1)
    rounds: int = Field(20, ge=1)
    local_steps: int = Field(5, ge=1)
    eta: float = Field(1.0, gt=0)
    staleness: int = Field(1, ge=0)
    participation: Optional[int] = Field(None, ge=1)
    batch_size: int = Field(4, ge=1)
    full_broadcast: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.staleness > self.rounds:
            raise ValueError("staleness must not exceed rounds")
        if self.participation is not None and self.participation > self.n_clients:
            raise ValueError("participation must not exceed n_clients")
        return self


class OptimizerSection(_Section):
    kind: Literal["sgd", "adamw"] = "sgd"
    eta_l: float = Field(0.01, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    epsilon: float = Field(1e-6, gt=0)
    weight_decay: float = Field(0.0, ge=0)
    bias_correction: bool = True
    eps_inside_sqrt: bool = False

    def build(self):
        if self.kind == "sgd":
            return SgdConfig(self.eta_l)
        return AdamWConfig(self.eta_l, self.beta1, self.beta2, self.epsilon, self.weight_decay,
                           self.bias_correction, self.eps_inside_sqrt)


class PartitionSection(_Section):
    strategy: Literal["equal", "by_layer", "explicit"] = "equal"
    blocks: Optional[int] = Field(None, ge=1)
    layer_dims: Optional[List[int]] = None
    ranges: Optional[List[Tuple[int, int]]] = None


class SchedulerSection(_Section):
    kind: Literal["random", "sequential", "reverse", "gradient_guided"] = "random"
    refresh_every: Optional[int] = Field(None, ge=1)


class ObjectiveSection(_Section):
    kind: Literal["quadratic", "logistic", "mlp"] = "quadratic"
    # quadratic
    dim: int = Field(16, ge=1)
    curvature: Tuple[float, float] = (0.5, 1.0)
    shared_curvature: bool = True
    identical: bool = False
    center_spread: float = Field(1.0, ge=0)
    sigma_g: Optional[float] = Field(None, ge=0)
    # logistic / mlp
    n_samples: int = Field(400, ge=1)
    n_features: int = Field(8, ge=1, le=32)
    n_classes: int = Field(4, ge=2, le=8)
    hidden: int = Field(8, ge=1, le=32)
    alpha: float = Field(0.5, gt=0)
    # all kinds
    noise_sigma: float = Field(0.0, ge=0)
    init_scale: float = Field(0.0, ge=0)


class CompressionSection(_Section):
    ratio: float = Field(0.2, gt=0, le=1)
    index_bits: int = Field(32, ge=1)
    value_bits: int = Field(32, ge=1)
    compress_downlink: bool = False

    def build(self):
        return TopKConfig(self.ratio, self.index_bits, self.value_bits, self.compress_downlink)


class NetworkSection(_Section):
    up_bw: float = Field(1e8, gt=0)
    down_bw: float = Field(1e8, gt=0)
    latency: float = Field(0.0, ge=0)


class ComputeSection(_Section):
    sec_per_local_step: float = Field(0.01, gt=0)
    reference_batch: int = Field(4, ge=1)


class OutputSection(_Section):
    trace: str = "trace.csv"
    summary: str = "summary.json"
    comparison: str = "comparison.csv"


class SweepSection(_Section):
    methods: List[str] = ["parablock", "fedbcd"]
    bandwidths: List[float] = [5e7, 1e8, 1.5e8]
    batch_sizes: List[int] = [2, 4, 8]


class RunConfig(_Section):
    seed: int = Field(0, ge=0)
    method: Literal["parablock", "fedbcd", "fedcybgd"] = "parablock"
    federation: FederationSection = FederationSection()
    optimizer: OptimizerSection = OptimizerSection()
    partition: PartitionSection = PartitionSection()
    scheduler: SchedulerSection = SchedulerSection()
    objective: ObjectiveSection = ObjectiveSection()
    compression: Optional[CompressionSection] = None
    network: NetworkSection = NetworkSection()
    compute: ComputeSection = ComputeSection()
    output: OutputSection = OutputSection()
    sweep: SweepSection = SweepSection()


def _format_errors(err):
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data):
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from None


def load_config(path):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from None
    return parse_config(data)


def build_objectives(rc):
    o, n = rc.objective, rc.federation.n_clients
    if o.kind == "quadratic":
        return quadratic_suite(n, o.dim, seed=rc.seed, curvature=o.curvature,
                               shared_curvature=o.shared_curvature, center_spread=o.center_spread,
                               sigma_g=o.sigma_g, noise_sigma=o.noise_sigma, identical=o.identical)
    objs, _, _ = data_suite(o.kind, n, n_samples=o.n_samples, n_features=o.n_features,
                            n_classes=o.n_classes, hidden=o.hidden, alpha=o.alpha, seed=rc.seed,
                            noise_sigma=o.noise_sigma)
    return objs


def build_partition(rc, objs):
    p, d = rc.partition, objs[0].dim
    try:
        if p.strategy == "equal":
            return make_partition(d, equal=p.blocks or 1)
        if p.strategy == "by_layer":
            return make_partition(d, by_layer=p.layer_dims or objs[0].layer_dims())
        if not p.ranges:
            raise ConfigError("partition.ranges: required for the explicit strategy")
        return make_partition(d, explicit=p.ranges)
    except ValueError as e:
        raise ConfigError(f"partition: {e}") from None


_FROM_CONFIG = object()


def build_run(rc, *, compression=_FROM_CONFIG, batch_size=None):
    """Materialise ``(FedConfig, objectives, theta0)`` from a validated config."""
    try:
        objs = build_objectives(rc)
    except ValueError as e:
        raise ConfigError(f"objective: {e}") from None
    part = build_partition(rc, objs)
    f = rc.federation
    if compression is _FROM_CONFIG:
        compression = rc.compression.build() if rc.compression else None
    cfg = FedConfig(
        n_clients=f.n_clients, rounds=f.rounds, local_steps=f.local_steps, eta=f.eta,
        optimizer=rc.optimizer.build(), partition=part, scheduler=rc.scheduler.kind,
        refresh_every=rc.scheduler.refresh_every, staleness=f.staleness,
        participation=f.participation, compression=compression,
        batch_size=batch_size or f.batch_size, seed=rc.seed, full_broadcast=f.full_broadcast,
    )
    rng = np.random.default_rng(rc.seed)
    theta0 = rc.objective.init_scale * rng.standard_normal(part.dim)
    return cfg, objs, theta0


def build_specs(rc, *, bandwidth=None, batch_size=None):
    n = rc.network
    link = LinkSpec(bandwidth or n.up_bw, bandwidth or n.down_bw, n.latency)
    comp = ComputeSpec(rc.compute.sec_per_local_step, batch_size or rc.federation.batch_size,
                       rc.compute.reference_batch)
    return link, comp
