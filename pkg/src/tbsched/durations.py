"""Parametric thread-block duration models used by the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional

import numpy as np

from .errors import ConfigError


class SMContext(NamedTuple):
    own_residency: int  # blocks of this kernel resident on the SM, including the new one
    co_resident_warps: int  # warps of other kernels resident on the SM
    max_warps_per_sm: int


class NormalStream:
    """Standard normal draws from a seeded generator, fetched in chunks."""

    def __init__(self, seed, chunk: int = 4096):
        self._gen = np.random.default_rng(seed)
        self._chunk = chunk
        self._buf = []
        self._pos = 0

    def normal(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self._gen.standard_normal(self._chunk).tolist()
            self._pos = 0
        z = self._buf[self._pos]
        self._pos += 1
        return z


def _to_cycles(x: float) -> int:
    return max(1, int(math.floor(x + 0.5)))


class DurationModel:
    kind = "abstract"

    def sample(self, kernel, ctx: SMContext, rng: NormalStream) -> int:
        raise NotImplementedError

    def is_constant(self) -> bool:
        return False


@dataclass(frozen=True)
class ConstantModel(DurationModel):
    kind = "constant"

    def sample(self, kernel, ctx, rng):
        return kernel.base_block_cycles

    def is_constant(self):
        return True


@dataclass(frozen=True)
class JitterModel(DurationModel):
    """Base duration scaled by a positive random factor with mean 1.

    ``lognormal`` keeps every factor positive by construction and hits the
    requested coefficient of variation exactly; ``normal`` truncates at 5% of
    the base (which biases the spread slightly for very large RSDs).
    ``rsd_percent=None`` defers to the kernel's own ``rsd_percent``.
    """

    kind = "jitter"
    rsd_percent: Optional[float] = None
    distribution: str = "lognormal"

    def __post_init__(self):
        if self.distribution not in ("lognormal", "normal"):
            raise ConfigError("distribution", f"unknown distribution {self.distribution!r}")
        if self.rsd_percent is not None and self.rsd_percent < 0:
            raise ConfigError("rsd_percent", "must be >= 0")

    def sample(self, kernel, ctx, rng):
        cv = (kernel.rsd_percent if self.rsd_percent is None else self.rsd_percent) / 100.0
        if cv == 0:
            return kernel.base_block_cycles
        z = rng.normal()
        if self.distribution == "lognormal":
            s2 = math.log1p(cv * cv)
            factor = math.exp(math.sqrt(s2) * z - 0.5 * s2)
        else:
            factor = max(0.05, 1.0 + cv * z)
        return _to_cycles(kernel.base_block_cycles * factor)


@dataclass(frozen=True)
class ResidencyTableModel(DurationModel):
    """Duration looked up by the kernel's current residency on the SM.

    Residencies missing from the table use the nearest lower entry; below the
    smallest entry the smallest entry is used.
    """

    kind = "residency_table"
    table: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.table:
            raise ConfigError("table", "residency table is empty")
        for r, t in self.table.items():
            if int(r) < 1 or t <= 0:
                raise ConfigError("table", f"bad entry {r}: {t}")

    def sample(self, kernel, ctx, rng):
        keys = sorted(int(k) for k in self.table)
        chosen = keys[0]
        for k in keys:
            if k <= ctx.own_residency:
                chosen = k
        value = self.table.get(chosen, self.table.get(str(chosen)))
        return _to_cycles(value)


@dataclass(frozen=True)
class InterferenceModel(DurationModel):
    """Slowdown linear in the warps other kernels keep resident on the SM."""

    kind = "interference"
    alpha: float = 0.75

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha", "must be >= 0")

    def sample(self, kernel, ctx, rng):
        if self.alpha == 0 or ctx.co_resident_warps == 0:
            return kernel.base_block_cycles
        return _to_cycles(kernel.base_block_cycles
                          * (1.0 + self.alpha * ctx.co_resident_warps / ctx.max_warps_per_sm))

    def is_constant(self):
        return self.alpha == 0


BUILTIN_MODELS = {
    "constant": ConstantModel(),
    "jitter": JitterModel(),
    "interference": InterferenceModel(),
}


def sample_duration(model: DurationModel, kernel, sm_context: SMContext, rng: NormalStream) -> int:
    return model.sample(kernel, sm_context, rng)


def resolve_model(workload, kernel) -> DurationModel:
    name = kernel.duration_model_ref
    if name in workload.duration_models:
        return workload.duration_models[name]
    if name in BUILTIN_MODELS:
        return BUILTIN_MODELS[name]
    raise ConfigError(f"kernels[{kernel.kernel_id}].duration_model", f"unknown model {name!r}")


def parse_duration_model(doc, where: str) -> DurationModel:
    if not isinstance(doc, dict) or "kind" not in doc:
        raise ConfigError(where, "must be a mapping with a 'kind'")
    kind = doc["kind"]
    params = {k: v for k, v in doc.items() if k != "kind"}
    try:
        if kind == "constant":
            return ConstantModel(**params)
        if kind == "jitter":
            return JitterModel(**params)
        if kind == "residency_table":
            table = {int(k): float(v) for k, v in params.pop("table", {}).items()}
            return ResidencyTableModel(table=table, **params)
        if kind == "interference":
            return InterferenceModel(**params)
    except TypeError as exc:
        raise ConfigError(where, str(exc)) from None
    except ConfigError as exc:
        raise ConfigError(f"{where}.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    raise ConfigError(f"{where}.kind", f"unknown kind {kind!r}")


def model_to_dict(model: DurationModel) -> dict:
    if isinstance(model, JitterModel):
        out = {"kind": "jitter", "distribution": model.distribution}
        if model.rsd_percent is not None:
            out["rsd_percent"] = model.rsd_percent
        return out
    if isinstance(model, ResidencyTableModel):
        return {"kind": "residency_table", "table": {int(k): v for k, v in model.table.items()}}
    if isinstance(model, InterferenceModel):
        return {"kind": "interference", "alpha": model.alpha}
    return {"kind": model.kind}
