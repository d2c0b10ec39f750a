"""Statistical distortion of repairs and synthetic corruption of clean data."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .dist import CIConstraint, Schema, ci_violation, empirical_distribution
from .repair import RepairProblem, apply_cleaner, solve_probabilistic_cleaner
from .transport import cost_matrix, exact_ot

MISSING = "MISSING"
KINDS = ("attribute_noise", "MAR", "MNAR")
_KIND_ALIASES = {"noise": "attribute_noise", "mar": "MAR", "mnar": "MNAR"}


@dataclass(frozen=True)
class DistortionReport:
    emd: float
    repair_cost: float  # mean per-row cost between aligned rows
    ci_violation_before: float | None
    ci_violation_after: float | None
    rows_changed: int


def statistical_distortion(original, repaired, schema: Schema, cost: str = "hamming",
                           sigma: CIConstraint | None = None) -> DistortionReport:
    """OT distance between the two empirical distributions under ``cost``.

    Rows are also compared position by position for ``rows_changed`` and
    ``repair_cost``, so both datasets must have the same number of rows.
    """
    if len(original) == 0 or len(repaired) == 0:
        raise ValueError("distortion needs two non-empty datasets")
    if len(original) != len(repaired):
        raise ValueError(
            f"row counts differ: {len(original)} original vs {len(repaired)} repaired"
        )
    C = cost_matrix(schema, cost)
    P = empirical_distribution(original, schema)
    Q = empirical_distribution(repaired, schema)
    emd = max(exact_ot(P.mass, Q.mass, C)[1], 0.0)
    a, b = schema.encode_many(original), schema.encode_many(repaired)
    before = after = None
    if sigma is not None:
        before, after = ci_violation(P, sigma), ci_violation(Q, sigma)
    return DistortionReport(
        emd=float(emd),
        repair_cost=float(C[a, b].mean()),
        ci_violation_before=before,
        ci_violation_after=after,
        rows_changed=int(np.count_nonzero(a != b)),
    )


@dataclass(frozen=True)
class CorruptionSpec:
    """Synthetic corruption of one target attribute.

    The event probability of a row is ``rate * g``, where the multiplier
    ``g`` is 1.0 for the first configuration of the conditioning values and
    2.0 for every other one. Noise and MAR condition on the driver
    attributes; MNAR conditions on the target's own value and the drivers.
    """

    kind: str
    target_attr: str
    driver_attrs: tuple[str, ...] = ()
    rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        kind = _KIND_ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown corruption kind {self.kind!r}; expected {KINDS}")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "driver_attrs", tuple(self.driver_attrs))
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("rate must lie in [0, 1]")
        if self.target_attr in self.driver_attrs:
            raise ValueError("the target attribute cannot also be a driver")
        if len(set(self.driver_attrs)) != len(self.driver_attrs):
            raise ValueError("driver attributes must be distinct")

    @property
    def conditioning(self) -> tuple[str, ...]:
        if self.kind == "MNAR":
            return (self.target_attr,) + self.driver_attrs
        return self.driver_attrs

    def validate(self, schema: Schema) -> None:
        for name in (self.target_attr,) + self.driver_attrs:
            schema.position(name)


def multipliers(n_configs: int) -> np.ndarray:
    g = np.full(n_configs, 2.0)
    g[0] = 1.0
    return g


def corrupted_schema(schema: Schema, spec: CorruptionSpec) -> Schema:
    """Schema of the corrupted data; missingness adds a MISSING value."""
    if spec.kind == "attribute_noise":
        return schema
    attrs = []
    for name, dom in schema.attributes:
        if name == spec.target_attr and MISSING not in dom:
            dom = dom + (MISSING,)
        attrs.append((name, dom))
    return Schema(tuple(attrs))


def _config_index(schema: Schema, data, names) -> np.ndarray:
    idx = np.zeros(len(data), dtype=np.int64)
    for name in names:
        pos, size = schema.position(name), len(schema.domain(name))
        col = np.array([schema.value_index(name, t[pos]) for t in data], dtype=np.int64)
        idx = idx * size + col
    return idx


def event_probabilities(data, spec: CorruptionSpec, schema: Schema) -> np.ndarray:
    names = spec.conditioning
    n_configs = int(np.prod([len(schema.domain(n)) for n in names], dtype=np.int64))
    g = multipliers(n_configs)
    return np.minimum(1.0, spec.rate * g[_config_index(schema, data, names)])


def inject_corruption(data, spec: CorruptionSpec, schema: Schema) -> list[tuple]:
    """Seeded corruption of ``spec.target_attr``.

    Noise replaces the value with a different one drawn uniformly from its
    domain; missingness writes :data:`MISSING`. The output is valid against
    :func:`corrupted_schema`.
    """
    spec.validate(schema)
    data = [tuple(t) for t in data]
    for t in data:
        schema.encode(t)
    pos = schema.position(spec.target_attr)
    dom = schema.domain(spec.target_attr)
    rng = np.random.default_rng(spec.seed)
    hit = rng.random(len(data)) < event_probabilities(data, spec, schema)
    shift = rng.integers(1, max(len(dom), 2), size=len(data))

    out = []
    for t, h, k in zip(data, hit, shift):
        if h:
            if spec.kind == "attribute_noise":
                if len(dom) < 2:
                    out.append(t)
                    continue
                value = dom[(schema.value_index(spec.target_attr, t[pos]) + k) % len(dom)]
            else:
                value = MISSING
            t = t[:pos] + (value,) + t[pos + 1:]
        out.append(t)
    return out


@dataclass(frozen=True)
class ExperimentReport:
    rows: int
    rows_corrupted: int
    ci_violation_clean: float
    ci_violation_corrupted: float
    ci_violation_repaired: float  # of the repaired distribution
    ci_violation_sample: float  # of the resampled repaired rows
    transport_cost: float
    corrupted_to_clean: float
    repaired_to_clean: float
    distortion: DistortionReport
    converged: bool
    lifted: bool

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_experiment(clean, spec: CorruptionSpec, prob: RepairProblem) -> ExperimentReport:
    """Corrupt ``clean``, repair it with ``prob``'s settings and compare.

    ``prob`` serves as a template: its data is replaced by the corrupted
    rows, and its schema by the corrupted schema. Distances to the clean
    data are exact OT distances between distributions under the repair
    cost.
    """
    schema = corrupted_schema(prob.schema, spec)
    corrupted = inject_corruption(clean, spec, prob.schema)
    task = dataclasses.replace(prob, data=corrupted, schema=schema)
    result = solve_probabilistic_cleaner(task)
    # a seed distinct from the corruption draws, which would otherwise
    # line up with exactly the rows that were corrupted
    resample_seed = int(np.random.SeedSequence([spec.seed, 1]).generate_state(1)[0])
    repaired = apply_cleaner(corrupted, result.cleaner, resample_seed)

    C = cost_matrix(schema, prob.cost)
    P_clean = empirical_distribution(clean, schema)
    P_corrupt = empirical_distribution(corrupted, schema)
    sigma = prob.sigma
    return ExperimentReport(
        rows=len(clean),
        rows_corrupted=sum(a != b for a, b in zip(clean, corrupted)),
        ci_violation_clean=ci_violation(P_clean, sigma),
        ci_violation_corrupted=result.ci_violation_before,
        ci_violation_repaired=result.ci_violation_after,
        ci_violation_sample=ci_violation(empirical_distribution(repaired, schema), sigma),
        transport_cost=result.transport_cost,
        corrupted_to_clean=max(exact_ot(P_corrupt.mass, P_clean.mass, C)[1], 0.0),
        repaired_to_clean=max(exact_ot(result.target.mass, P_clean.mass, C)[1], 0.0),
        distortion=statistical_distortion(corrupted, repaired, schema, prob.cost, sigma),
        converged=result.converged,
        lifted=result.lifted,
    )
