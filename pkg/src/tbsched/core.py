"""Domain types, occupancy arithmetic and trace/workload file I/O."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, NamedTuple, Optional, Sequence

import yaml

from .errors import ConfigError, ParseError, ValidationError, ZeroResidency

SCHEMA_VERSION = 1

TRACE_HEADER = ("kernel_id", "invocation", "sm_id", "block_index", "start_cycle", "end_cycle")
SOURCE_TAGS = ("single-gpu", "single-sim", "mpmax", "synthetic")

# Order of the per-SM resource vector used throughout the engine.
RESOURCES = ("threads", "registers", "shmem", "block_slots", "warps")


@dataclass(frozen=True)
class SMConfig:
    num_sms: int = 15
    threads_per_sm: int = 1536
    registers_per_sm: int = 32768
    shmem_per_sm: int = 48 * 1024
    max_blocks_per_sm: int = 8
    max_warps_per_sm: int = 48
    warp_size: int = 32

    def __post_init__(self):
        for name in ("num_sms", "threads_per_sm", "registers_per_sm", "shmem_per_sm",
                     "max_blocks_per_sm", "max_warps_per_sm", "warp_size"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ConfigError(f"sm_config.{name}", f"must be a positive integer, got {value!r}")
        if self.max_blocks_per_sm > self.max_warps_per_sm:
            raise ConfigError("sm_config.max_blocks_per_sm", "exceeds max_warps_per_sm")

    @property
    def capacity(self) -> tuple:
        return (self.threads_per_sm, self.registers_per_sm, self.shmem_per_sm,
                self.max_blocks_per_sm, self.max_warps_per_sm)


# GTX 480 configuration used for all the ERCBench experiments.
FERMI = SMConfig()


@dataclass(frozen=True)
class KernelSpec:
    """Static description of one grid.

    ``rsd_percent`` is only consulted by jitter duration models; it carries the
    per-kernel block duration spread so catalog kernels can be simulated
    stochastically without a separate model entry per kernel.
    """

    kernel_id: str
    name: str
    total_blocks: int
    threads_per_block: int
    base_block_cycles: int
    regs_per_thread: int = 0
    shmem_per_block: int = 0
    residency_override: Optional[int] = None
    duration_model_ref: str = "constant"
    arrival_cycle: int = 0
    alone_runtime_hint: Optional[int] = None
    rsd_percent: float = 0.0

    def __post_init__(self):
        if self.total_blocks < 1:
            raise ConfigError(f"kernels[{self.kernel_id}].total_blocks", "must be >= 1")
        if self.threads_per_block < 1:
            raise ConfigError(f"kernels[{self.kernel_id}].threads_per_block", "must be >= 1")
        if self.base_block_cycles <= 0:
            raise ConfigError(f"kernels[{self.kernel_id}].base_block_cycles", "must be > 0")
        if self.regs_per_thread < 0 or self.shmem_per_block < 0:
            raise ConfigError(f"kernels[{self.kernel_id}]", "register/shared memory needs must be >= 0")
        if self.residency_override is not None and self.residency_override < 1:
            raise ConfigError(f"kernels[{self.kernel_id}].residency_override", "must be >= 1")
        if self.arrival_cycle < 0:
            raise ConfigError(f"kernels[{self.kernel_id}].arrival_cycle", "must be >= 0")

    def validate_against(self, sm: SMConfig) -> None:
        if self.threads_per_block > sm.threads_per_sm:
            raise ConfigError(f"kernels[{self.kernel_id}].threads_per_block",
                              f"{self.threads_per_block} exceeds threads_per_sm {sm.threads_per_sm}")
        if self.residency_override is not None and self.residency_override > sm.max_blocks_per_sm:
            raise ConfigError(f"kernels[{self.kernel_id}].residency_override",
                              f"exceeds max_blocks_per_sm {sm.max_blocks_per_sm}")

    def footprint(self, sm: SMConfig) -> tuple:
        """Resources one block claims, in ``RESOURCES`` order."""
        tpb = self.threads_per_block
        return (tpb, tpb * self.regs_per_thread, self.shmem_per_block, 1,
                -(-tpb // sm.warp_size))


def residency_limits(spec: KernelSpec, sm: SMConfig, capacity: Optional[Sequence[int]] = None) -> dict:
    """Blocks of ``spec`` that fit in ``capacity`` (default: an empty SM), per resource.

    Resources the kernel does not use are omitted.
    """
    cap = sm.capacity if capacity is None else capacity
    need = spec.footprint(sm)
    return {name: max(0, avail) // req for name, req, avail in zip(RESOURCES, need, cap) if req > 0}


def max_residency(spec: KernelSpec, sm: SMConfig) -> int:
    """Maximum number of blocks of ``spec`` simultaneously resident on one SM."""
    spec.validate_against(sm)
    if spec.residency_override is not None:
        return spec.residency_override
    limits = residency_limits(spec, sm)
    resource = min(limits, key=limits.get)
    if limits[resource] == 0:
        raise ZeroResidency(spec.kernel_id, resource)
    return limits[resource]


class BlockRecord(NamedTuple):
    kernel_id: str
    invocation: int
    sm_id: int
    block_index: int
    start_cycle: int
    end_cycle: int

    @property
    def duration(self) -> int:
        return self.end_cycle - self.start_cycle


def _record_key(r: BlockRecord):
    return (r.kernel_id, r.invocation, r.sm_id, r.end_cycle, r.start_cycle, r.block_index)


@dataclass(frozen=True)
class Trace:
    records: tuple
    source_tag: str = "synthetic"

    def __post_init__(self):
        if self.source_tag not in SOURCE_TAGS:
            raise ValidationError(f"unknown source_tag {self.source_tag!r}")

    @classmethod
    def from_records(cls, records: Iterable[BlockRecord], source_tag: str = "synthetic") -> "Trace":
        """Build a trace in canonical order (by end cycle within each kernel/SM group)."""
        return cls(tuple(sorted(records, key=_record_key)), source_tag)

    def __len__(self):
        return len(self.records)

    def groups(self) -> dict:
        """Records keyed by (kernel_id, invocation, sm_id), each in finish order."""
        out: dict = {}
        for r in self.records:
            out.setdefault((r.kernel_id, r.invocation, r.sm_id), []).append(r)
        return out

    def kernel_ids(self) -> list:
        return sorted({r.kernel_id for r in self.records})

    def check_residency(self, residency: Mapping[str, int]) -> None:
        """Raise if any (kernel, invocation, SM) ever holds more blocks than allowed."""
        for (kid, inv, sm), recs in self.groups().items():
            limit = residency.get(kid)
            if limit is None:
                continue
            events = sorted([(r.start_cycle, 1) for r in recs] + [(r.end_cycle, -1) for r in recs],
                            key=lambda e: (e[0], e[1]))
            live = 0
            for cycle, delta in events:
                live += delta
                if live > limit:
                    raise ValidationError(
                        f"kernel {kid!r} invocation {inv} exceeds residency {limit} on SM {sm} at cycle {cycle}")


def parse_trace(data, num_sms: Optional[int] = None, source_tag: Optional[str] = None) -> Trace:
    """Parse the trace CSV format.

    An optional first line ``# source_tag: <tag>`` declares the trace group.
    Without it the trace is assumed to come from hardware (``single-gpu``).
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = data.splitlines()
    tag = "single-gpu"
    first = 0
    while first < len(lines) and lines[first].startswith("#"):
        comment = lines[first][1:].strip()
        if comment.startswith("source_tag:"):
            tag = comment.split(":", 1)[1].strip()
        first += 1
    if source_tag is not None:
        tag = source_tag
    if tag not in SOURCE_TAGS:
        raise ParseError(f"unknown source_tag {tag!r}", line=1)
    if first >= len(lines) or not lines[first].strip():
        raise ParseError("missing header", line=first + 1)
    header = tuple(h.strip() for h in lines[first].split(","))
    if header != TRACE_HEADER:
        raise ParseError(f"expected header {','.join(TRACE_HEADER)}", line=first + 1)

    records = []
    for offset, row in enumerate(csv.reader(lines[first + 1:])):
        lineno = first + 2 + offset
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 6:
            raise ParseError(f"expected 6 fields, got {len(row)}", line=lineno)
        kid = row[0].strip()
        if not kid:
            raise ParseError("empty kernel_id", line=lineno)
        try:
            inv, sm, blk, start, end = (int(c) for c in row[1:])
        except ValueError:
            raise ParseError("non-integer field", line=lineno) from None
        if end <= start:
            raise ValidationError(f"end_cycle {end} <= start_cycle {start}", line=lineno)
        if sm < 0 or (num_sms is not None and sm >= num_sms):
            raise ValidationError(f"unknown SM {sm}", line=lineno)
        if inv < 0 or blk < 0 or start < 0:
            raise ValidationError("negative field", line=lineno)
        records.append(BlockRecord(kid, inv, sm, blk, start, end))
    return Trace.from_records(records, tag)


def format_trace(trace: Trace) -> str:
    buf = io.StringIO()
    buf.write(f"# source_tag: {trace.source_tag}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    w.writerows(trace.records)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Workloads


@dataclass(frozen=True)
class ArrivalPolicy:
    """How kernel arrival cycles are derived.

    ``explicit`` keeps each kernel's own ``arrival_cycle``; ``stagger`` puts
    kernel i at ``i * cycles``; ``fraction_of_first`` puts every later kernel
    at ``floor(fraction * T)`` where T is the first kernel's solo runtime.
    """

    kind: str = "explicit"
    cycles: int = 0
    fraction: float = 0.0

    def __post_init__(self):
        if self.kind not in ("explicit", "stagger", "fraction_of_first"):
            raise ConfigError("arrival_policy.kind", f"unknown kind {self.kind!r}")
        if self.cycles < 0:
            raise ConfigError("arrival_policy.cycles", "must be >= 0")
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError("arrival_policy.fraction", "must be in [0, 1]")


@dataclass(frozen=True)
class WorkloadSpec:
    sm_config: SMConfig
    kernels: tuple
    arrival_policy: ArrivalPolicy = ArrivalPolicy()
    seed: int = 0
    duration_models: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if not self.kernels:
            raise ConfigError("kernels", "workload needs at least one kernel")
        ids = [k.kernel_id for k in self.kernels]
        if len(set(ids)) != len(ids):
            raise ConfigError("kernels", "kernel_id values must be unique")
        for k in self.kernels:
            k.validate_against(self.sm_config)

    @property
    def name(self) -> str:
        return "+".join(k.kernel_id for k in self.kernels)

    def kernel(self, kernel_id: str) -> KernelSpec:
        for k in self.kernels:
            if k.kernel_id == kernel_id:
                return k
        raise KeyError(kernel_id)

    def resolved(self, solo_runtime: Optional[Callable[["WorkloadSpec", KernelSpec], int]] = None
                 ) -> "WorkloadSpec":
        """Return a copy with concrete arrival cycles and an explicit arrival policy."""
        ap = self.arrival_policy
        if ap.kind == "explicit":
            return self
        if ap.kind == "stagger":
            kernels = tuple(replace(k, arrival_cycle=i * ap.cycles) for i, k in enumerate(self.kernels))
        else:
            first = self.kernels[0]
            if first.alone_runtime_hint is not None:
                runtime = first.alone_runtime_hint
            else:
                if solo_runtime is None:
                    from .simengine import solo_runtime
                runtime = solo_runtime(self, first)
            offset = math.floor(ap.fraction * runtime)
            kernels = (replace(first, arrival_cycle=0),) + tuple(
                replace(k, arrival_cycle=offset) for k in self.kernels[1:])
        return replace(self, kernels=kernels, arrival_policy=ArrivalPolicy())


_KERNEL_FIELDS = {
    "kernel_id": str, "name": str, "total_blocks": int, "threads_per_block": int,
    "base_block_cycles": int, "regs_per_thread": int, "shmem_per_block": int,
    "residency_override": int, "duration_model": str, "arrival_cycle": int,
    "alone_runtime_hint": int, "rsd_percent": float,
}


def _coerce(value, kind, fieldname):
    if value is None:
        return None
    try:
        if kind is int:
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigError(fieldname, f"expected {kind.__name__}, got {value!r}") from None


def _parse_kernel(entry, index, catalog):
    where = f"kernels[{index}]"
    if not isinstance(entry, dict):
        raise ConfigError(where, "must be a mapping")
    unknown = set(entry) - set(_KERNEL_FIELDS) - {"catalog"}
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown field")
    base = {}
    if "catalog" in entry:
        if catalog is None:
            from .catalog import load_catalog
            catalog = load_catalog()
        try:
            spec = catalog[entry["catalog"]]
        except KeyError:
            raise ConfigError(f"{where}.catalog", f"unknown benchmark {entry['catalog']!r}") from None
        base = {
            "kernel_id": spec.kernel_id, "name": spec.name, "total_blocks": spec.total_blocks,
            "threads_per_block": spec.threads_per_block, "base_block_cycles": spec.base_block_cycles,
            "regs_per_thread": spec.regs_per_thread, "shmem_per_block": spec.shmem_per_block,
            "residency_override": spec.residency_override, "rsd_percent": spec.rsd_percent,
        }
    values = dict(base)
    for key, kind in _KERNEL_FIELDS.items():
        if key in entry:
            values[key] = _coerce(entry[key], kind, f"{where}.{key}")
    for required in ("kernel_id", "total_blocks", "threads_per_block", "base_block_cycles"):
        if values.get(required) is None:
            raise ConfigError(f"{where}.{required}", "missing")
    values.setdefault("name", values["kernel_id"])
    if "duration_model" in values:
        values["duration_model_ref"] = values.pop("duration_model")
    return KernelSpec(**values)


def load_workload(data, catalog: Optional[Mapping[str, KernelSpec]] = None,
                  solo_runtime: Optional[Callable] = None) -> WorkloadSpec:
    """Parse a YAML workload document and resolve its arrival cycles."""
    from .durations import parse_duration_model

    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = yaml.safe_load(data)
    except yaml.YAMLError as exc:
        raise ConfigError("document", f"invalid YAML: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("document", "top level must be a mapping")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    sm_doc = doc.get("sm_config") or {}
    if not isinstance(sm_doc, dict):
        raise ConfigError("sm_config", "must be a mapping")
    sm_kwargs = {}
    for key, value in sm_doc.items():
        if key not in SMConfig.__dataclass_fields__:
            raise ConfigError(f"sm_config.{key}", "unknown field")
        sm_kwargs[key] = _coerce(value, int, f"sm_config.{key}")
    sm = SMConfig(**sm_kwargs)

    ap_doc = doc.get("arrival_policy") or {"kind": "explicit"}
    if not isinstance(ap_doc, dict):
        raise ConfigError("arrival_policy", "must be a mapping")
    kind = ap_doc.get("kind", "explicit")
    arrival = ArrivalPolicy(
        kind=kind,
        cycles=_coerce(ap_doc.get("cycles", 0), int, "arrival_policy.cycles"),
        fraction=_coerce(ap_doc.get("fraction", 0.0), float, "arrival_policy.fraction"),
    )

    models = {}
    for name, mdoc in (doc.get("duration_models") or {}).items():
        models[str(name)] = parse_duration_model(mdoc, f"duration_models.{name}")

    kdocs = doc.get("kernels")
    if not isinstance(kdocs, list) or not kdocs:
        raise ConfigError("kernels", "must be a non-empty list")
    kernels = tuple(_parse_kernel(entry, i, catalog) for i, entry in enumerate(kdocs))

    seed = _coerce(doc.get("seed", 0), int, "seed")
    workload = WorkloadSpec(sm, kernels, arrival, seed, models)
    from .durations import resolve_model
    for k in kernels:
        resolve_model(workload, k)  # fail early on dangling duration_model references
    return workload.resolved(solo_runtime)


def dump_workload(workload: WorkloadSpec) -> str:
    """Serialize a workload back to the YAML schema (explicit arrivals)."""
    from .durations import model_to_dict

    kernels = []
    for k in workload.kernels:
        entry = {
            "kernel_id": k.kernel_id, "name": k.name, "total_blocks": k.total_blocks,
            "threads_per_block": k.threads_per_block, "base_block_cycles": k.base_block_cycles,
            "regs_per_thread": k.regs_per_thread, "shmem_per_block": k.shmem_per_block,
            "duration_model": k.duration_model_ref, "arrival_cycle": k.arrival_cycle,
            "rsd_percent": k.rsd_percent,
        }
        if k.residency_override is not None:
            entry["residency_override"] = k.residency_override
        if k.alone_runtime_hint is not None:
            entry["alone_runtime_hint"] = k.alone_runtime_hint
        kernels.append(entry)
    ap = workload.arrival_policy
    doc = {
        "schema_version": SCHEMA_VERSION,
        "seed": workload.seed,
        "sm_config": {f: getattr(workload.sm_config, f) for f in SMConfig.__dataclass_fields__},
        "arrival_policy": {"kind": ap.kind, "cycles": ap.cycles, "fraction": ap.fraction},
        "duration_models": {n: model_to_dict(m) for n, m in workload.duration_models.items()},
        "kernels": kernels,
    }
    return yaml.safe_dump(doc, sort_keys=False)
