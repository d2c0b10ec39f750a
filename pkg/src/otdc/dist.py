"""Discrete joint distributions over finite attribute domains.

A :class:`Schema` fixes an ordered list of attributes and their value
domains. Tuples over the schema are indexed with a row-major mixed-radix
code (first attribute most significant), so a :class:`DiscreteDistribution`
is a dense probability vector of length ``schema.size`` that can be viewed
as a tensor with one axis per attribute.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Union

import numpy as np

Value = Union[str, int]
Tuple_ = tuple  # a data tuple: one value per schema attribute

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Schema:
    """Ordered attributes with finite, ordered value domains."""

    attributes: tuple[tuple[str, tuple[Value, ...]], ...]
    _lookup: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        attrs = tuple((str(name), tuple(dom)) for name, dom in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        names = [a for a, _ in attrs]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate attribute names in {names}")
        lookup = {}
        for name, dom in attrs:
            if not dom:
                raise ValueError(f"attribute {name!r} has an empty domain")
            if len(set(dom)) != len(dom):
                raise ValueError(f"attribute {name!r} has duplicate domain values")
            lookup[name] = {v: i for i, v in enumerate(dom)}
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def from_domains(cls, domains: dict[str, Sequence[Value]]) -> "Schema":
        return cls(tuple((k, tuple(v)) for k, v in domains.items()))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.attributes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(d) for _, d in self.attributes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.attributes else 1

    def domain(self, name: str) -> tuple[Value, ...]:
        return self.attributes[self.position(name)][1]

    def position(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown attribute {name!r}") from None

    def restrict(self, names: Iterable[str]) -> "Schema":
        """Sub-schema on ``names``, keeping this schema's attribute order."""
        wanted = set(names)
        unknown = wanted - set(self.names)
        if unknown:
            raise KeyError(f"unknown attributes {sorted(unknown)}")
        return Schema(tuple(a for a in self.attributes if a[0] in wanted))

    def value_index(self, name: str, value: Value) -> int:
        try:
            return self._lookup[name][value]
        except KeyError:
            raise ValueError(
                f"value {value!r} is outside the domain of attribute {name!r}"
            ) from None

    def encode(self, tup: Sequence[Value]) -> int:
        if len(tup) != len(self.attributes):
            raise ValueError(
                f"tuple has {len(tup)} values, schema has {len(self.attributes)}"
            )
        idx = 0
        for (name, dom), v in zip(self.attributes, tup):
            idx = idx * len(dom) + self.value_index(name, v)
        return idx

    def decode(self, index: int) -> tuple:
        if not 0 <= index < self.size:
            raise IndexError(f"index {index} outside [0, {self.size})")
        digits = np.unravel_index(int(index), self.shape) if self.attributes else ()
        return tuple(dom[int(d)] for (_, dom), d in zip(self.attributes, digits))

    def encode_many(self, data: Iterable[Sequence[Value]]) -> np.ndarray:
        return np.fromiter((self.encode(t) for t in data), dtype=np.int64)

    def decode_many(self, indices: Iterable[int]) -> list[tuple]:
        return [self.decode(i) for i in indices]


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probability vector over the joint domain of ``schema``."""

    schema: Schema
    mass: np.ndarray

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float).ravel()
        if mass.shape != (self.schema.size,):
            raise ValueError(
                f"mass has length {mass.size}, joint domain has {self.schema.size}"
            )
        if np.any(~np.isfinite(mass)) or np.any(mass < 0):
            raise ValueError("mass entries must be finite and non-negative")
        total = mass.sum()
        if total <= 0:
            raise ValueError("mass sums to zero")
        if abs(total - 1.0) > _SUM_TOL:
            mass = mass / total
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @property
    def table(self) -> np.ndarray:
        """Tensor view with one axis per schema attribute."""
        return self.mass.reshape(self.schema.shape)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.mass > 0)

    def prob(self, tup: Sequence[Value]) -> float:
        return float(self.mass[self.schema.encode(tup)])

    def as_dict(self) -> dict[tuple, float]:
        return {self.schema.decode(i): float(self.mass[i]) for i in self.support}


@dataclass(frozen=True)
class CIConstraint:
    """``x ⫫ y | z`` over attribute-name sets; empty ``z`` means marginal
    independence."""

    x: tuple[str, ...]
    y: tuple[str, ...]
    z: tuple[str, ...] = ()

    def __post_init__(self):
        for part in ("x", "y", "z"):
            object.__setattr__(self, part, tuple(getattr(self, part)))
        if not self.x or not self.y:
            raise ValueError("both sides of a CI constraint need attributes")
        sets = [set(self.x), set(self.y), set(self.z)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            raise ValueError(f"constraint attribute sets overlap: {self}")

    @property
    def attributes(self) -> tuple[str, ...]:
        return self.x + self.y + self.z

    def validate(self, schema: Schema) -> None:
        missing = [a for a in self.attributes if a not in schema.names]
        if missing:
            raise KeyError(f"constraint mentions unknown attributes {missing}")

    def is_saturated(self, schema: Schema) -> bool:
        self.validate(schema)
        return set(self.attributes) == set(schema.names)

    def swapped(self) -> "CIConstraint":
        return CIConstraint(self.y, self.x, self.z)

    def __str__(self):
        text = f"{','.join(self.x)} ⫫ {','.join(self.y)}"
        return f"{text} | {','.join(self.z)}" if self.z else text


@dataclass(frozen=True)
class ConditionalTable:
    """Rows ``P(target | given=u)``; rows with ``defined[u] == False`` had
    zero marginal mass and hold NaN."""

    given: Schema
    target: Schema
    table: np.ndarray
    defined: np.ndarray

    def row(self, given_values: Sequence[Value]) -> np.ndarray | None:
        i = self.given.encode(given_values)
        return self.table[i] if self.defined[i] else None


def empirical_distribution(
    dataset: Sequence[Sequence[Value]], schema: Schema
) -> DiscreteDistribution:
    """Relative frequencies of the tuples in ``dataset`` (bag semantics)."""
    if len(dataset) == 0:
        raise ValueError("cannot estimate a distribution from an empty dataset")
    codes = schema.encode_many(dataset)
    counts = np.bincount(codes, minlength=schema.size).astype(float)
    return DiscreteDistribution(schema, counts / len(codes))


def _axes(schema: Schema, names: Iterable[str]) -> list[int]:
    return [schema.position(n) for n in names]


def marginal(P: DiscreteDistribution, attrs: Iterable[str]) -> DiscreteDistribution:
    sub = P.schema.restrict(attrs)
    keep = set(sub.names)
    drop = tuple(i for i, n in enumerate(P.schema.names) if n not in keep)
    return DiscreteDistribution(sub, P.table.sum(axis=drop).ravel())


def _grouped(P: DiscreteDistribution, *groups: Sequence[str]) -> np.ndarray:
    """Joint table of ``P`` with one flattened axis per attribute group.

    Attributes inside a group keep schema order so the flattened index of
    each group matches ``P.schema.restrict(group).encode``.
    """
    used = [n for g in groups for n in g]
    M = marginal(P, used)
    ordered = [[n for n in M.schema.names if n in set(g)] for g in groups]
    perm = [M.schema.position(n) for g in ordered for n in g]
    t = np.transpose(M.table, perm) if perm else M.table
    dims = [int(np.prod([len(M.schema.domain(n)) for n in g], dtype=np.int64)) for g in ordered]
    return t.reshape(dims)


def conditional(
    P: DiscreteDistribution, target: Iterable[str], given: Iterable[str]
) -> ConditionalTable:
    target, given = list(target), list(given)
    if set(target) & set(given):
        raise ValueError("target and given attribute sets overlap")
    t_schema = P.schema.restrict(target)
    g_schema = P.schema.restrict(given)
    joint = _grouped(P, g_schema.names, t_schema.names)
    pu = joint.sum(axis=1)
    defined = pu > 0
    table = np.full(joint.shape, np.nan)
    table[defined] = joint[defined] / pu[defined, None]
    return ConditionalTable(g_schema, t_schema, table, defined)


def _xyz(P: DiscreteDistribution, sigma: CIConstraint) -> np.ndarray:
    sigma.validate(P.schema)
    return _grouped(P, sigma.x, sigma.y, sigma.z)


def ci_violation(P: DiscreteDistribution, sigma: CIConstraint) -> float:
    """max over z with P(z) > 0 of |P(x,y|z) - P(x|z) P(y|z)|."""
    t = _xyz(P, sigma)
    pz = t.sum(axis=(0, 1))
    live = pz > 0
    cond = t[:, :, live] / pz[live]
    gap = cond - cond.sum(axis=1, keepdims=True) * cond.sum(axis=0, keepdims=True)
    return float(np.abs(gap).max()) if gap.size else 0.0


def satisfies_ci(
    P: DiscreteDistribution, sigma: CIConstraint, tol: float = 1e-6
) -> tuple[bool, float]:
    if tol < 0:
        raise ValueError("tol must be non-negative")
    v = ci_violation(P, sigma)
    return v <= tol, v


def conditional_mutual_information(P: DiscreteDistribution, sigma: CIConstraint) -> float:
    """I(X; Y | Z) in nats."""
    t = _xyz(P, sigma)
    pxz = t.sum(axis=1, keepdims=True)
    pyz = t.sum(axis=0, keepdims=True)
    pz = t.sum(axis=(0, 1), keepdims=True)
    nz = t > 0
    ratio = (t * pz)[nz] / np.broadcast_to(pxz * pyz, t.shape)[nz]
    return float(max(0.0, np.sum(t[nz] * np.log(ratio))))


def ci_projection(P: DiscreteDistribution, sigma: CIConstraint) -> DiscreteDistribution:
    """Closest CI-consistent distribution ``P(z) P(x|z) P(y|z)``.

    This is the minimiser of ``KL(P || Q)`` over distributions ``Q`` that
    satisfy ``sigma``. Only defined for constraints that cover the schema.
    """
    if not sigma.is_saturated(P.schema):
        raise ValueError(
            f"constraint {sigma} does not cover every attribute; lift instead"
        )
    t = _xyz(P, sigma)
    pxz = t.sum(axis=1, keepdims=True)
    pyz = t.sum(axis=0, keepdims=True)
    pz = t.sum(axis=(0, 1), keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(pz > 0, pxz * pyz / pz, 0.0)
    # back from (x, y, z) grouping to schema order
    s = P.schema
    groups = [[n for n in s.names if n in set(g)] for g in (sigma.x, sigma.y, sigma.z)]
    order = [n for g in groups for n in g]
    q = q.reshape([len(s.domain(n)) for n in order])
    q = np.transpose(q, np.argsort([s.position(n) for n in order]))
    return DiscreteDistribution(s, q.ravel())


def parse_constraint(text: str) -> CIConstraint:
    """Parse ``"X ; Y | Z"`` style constraint strings.

    The part before ``|`` holds the two independent sides. They are split on
    ``;``, ``⫫`` or ``_||_`` when present; otherwise the comma-separated list
    must name exactly two attributes. The conditioning set after ``|`` is
    optional. Whitespace is ignored.
    """
    head, _, tail = text.partition("|")

    def names(part):
        return [p.strip() for p in part.split(",") if p.strip()]

    for sep in (";", "⫫", "_||_"):
        if sep in head:
            left, right = head.split(sep, 1)
            x, y = names(left), names(right)
            break
    else:
        both = names(head)
        if len(both) != 2:
            raise ValueError(
                f"cannot split {head.strip()!r} into two sides; "
                "separate multi-attribute sides with ';'"
            )
        x, y = both[:1], both[1:]
    return CIConstraint(tuple(x), tuple(y), tuple(names(tail)))
