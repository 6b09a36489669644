"""Unit-level experiment data and metric definitions."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class MetricKind(str, enum.Enum):
    COUNT = "count"
    RATIO = "ratio"


@dataclass(frozen=True)
class MetricSpec:
    kind: MetricKind
    numerator: str = "y"
    denominator: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if (self.kind is MetricKind.RATIO) != (self.denominator is not None):
            raise ValueError("denominator must be given iff the metric is a ratio")


class Violation(NamedTuple):
    kind: str
    index: int | None
    detail: str = ""


class FrameValidationError(ValueError):
    """Raised with every invariant violation found in a frame."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        lines = [f"{v.kind} at {v.index}: {v.detail}" if v.index is not None
                 else f"{v.kind}: {v.detail}" for v in self.violations[:20]]
        more = len(self.violations) - 20
        if more > 0:
            lines.append(f"... {more} more")
        super().__init__("invalid experiment frame:\n  " + "\n  ".join(lines))

    @property
    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}


@dataclass(frozen=True, eq=False)
class ExperimentFrame:
    """Column-oriented unit records ``(X_i, T_i, Y_i, Z_i)``.

    Arrays are stored read-only; derive new frames with :meth:`replace`
    or :meth:`take` instead of mutating.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    y: np.ndarray
    z: np.ndarray | None = None
    unit_ids: np.ndarray | None = None
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov.reshape(-1, 1)
        n = len(cov)
        ids = np.arange(n) if self.unit_ids is None else np.asarray(self.unit_ids)
        arrays = {
            "covariates": cov,
            "treatment": np.asarray(self.treatment),
            "y": np.asarray(self.y, dtype=float),
            "z": None if self.z is None else np.asarray(self.z, dtype=float),
            "unit_ids": ids,
        }
        for name, arr in arrays.items():
            if arr is not None:
                arr = arr.copy() if arr.flags.writeable else arr
                arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if not self.covariate_names:
            names = tuple(f"x{j + 1}" for j in range(cov.shape[1]))
            object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def treated(self) -> np.ndarray:
        return self.treatment == 1

    @property
    def n_t(self) -> int:
        return int(np.count_nonzero(self.treatment == 1))

    @property
    def n_c(self) -> int:
        return int(np.count_nonzero(self.treatment == 0))

    def replace(self, **changes) -> ExperimentFrame:
        kwargs = dict(
            covariates=self.covariates, treatment=self.treatment, y=self.y, z=self.z,
            unit_ids=self.unit_ids, covariate_names=self.covariate_names,
        )
        kwargs.update(changes)
        return ExperimentFrame(**kwargs)

    def take(self, index) -> ExperimentFrame:
        index = np.asarray(index)
        return ExperimentFrame(
            covariates=self.covariates[index],
            treatment=self.treatment[index],
            y=self.y[index],
            z=None if self.z is None else self.z[index],
            unit_ids=self.unit_ids[index],
            covariate_names=self.covariate_names,
        )


def concat_frames(*frames: ExperimentFrame) -> ExperimentFrame:
    has_z = all(f.z is not None for f in frames)
    return ExperimentFrame(
        covariates=np.vstack([f.covariates for f in frames]),
        treatment=np.concatenate([f.treatment for f in frames]),
        y=np.concatenate([f.y for f in frames]),
        z=np.concatenate([f.z for f in frames]) if has_z else None,
        unit_ids=np.arange(sum(f.n for f in frames)),
        covariate_names=frames[0].covariate_names,
    )


def validate_frame(frame: ExperimentFrame, spec: MetricSpec | None = None) -> ExperimentFrame:
    """Return ``frame`` unchanged if it is a legal experiment frame.

    Raises :class:`FrameValidationError` listing every violation
    (``NonBinaryTreatment``, ``NonFiniteValue``, ``RaggedCovariates``,
    ``DegenerateGroup``, ``MissingDenominator``).
    """
    violations: list[Violation] = []
    n = len(frame.y)
    if frame.covariates.shape[0] != n or len(frame.treatment) != n:
        violations.append(Violation("RaggedCovariates", None,
                                    "covariates/treatment/y lengths differ"))
        raise FrameValidationError(violations)

    t = frame.treatment
    with np.errstate(invalid="ignore"):
        bad_t = ~((t == 0) | (t == 1))
    violations += [Violation("NonBinaryTreatment", int(i), f"treatment={t[i]!r}")
                   for i in np.flatnonzero(bad_t)]

    columns = [("y", frame.y), ("covariates", frame.covariates)]
    if frame.z is not None:
        if len(frame.z) != n:
            violations.append(Violation("RaggedCovariates", None, "z length differs"))
        else:
            columns.append(("z", frame.z))
    for name, col in columns:
        finite = np.isfinite(col)
        if col.ndim > 1:
            finite = finite.all(axis=1)
        violations += [Violation("NonFiniteValue", int(i), name) for i in np.flatnonzero(~finite)]

    if spec is not None and spec.kind is MetricKind.RATIO and frame.z is None:
        violations.append(Violation("MissingDenominator", None, "ratio metric needs z"))

    n_t = int(np.count_nonzero(t == 1))
    n_c = int(np.count_nonzero(t == 0))
    if n_t < 2:
        violations.append(Violation("DegenerateGroup", None, f"n_t={n_t} < 2"))
    if n_c < 2:
        violations.append(Violation("DegenerateGroup", None, f"n_c={n_c} < 2"))

    if violations:
        raise FrameValidationError(violations)
    return frame


class MeanStats(NamedTuple):
    n: int
    mean_y: float
    var_y: float
    mean_z: float | None = None
    var_z: float | None = None
    cov_yz: float | None = None


def _mean_var(x: np.ndarray) -> tuple[float, float]:
    # np.sum is pairwise; two passes keep the variance free of cancellation
    n = len(x)
    m = float(np.sum(x) / n)
    d = x - m
    return m, float(np.sum(d * d) / (n - 1))


def _group_stats(y: np.ndarray, z: np.ndarray | None) -> MeanStats:
    my, vy = _mean_var(y)
    if z is None:
        return MeanStats(len(y), my, vy)
    mz, vz = _mean_var(z)
    cyz = float(np.sum((y - my) * (z - mz)) / (len(y) - 1))
    return MeanStats(len(y), my, vy, mz, vz, cyz)


def group_means(frame: ExperimentFrame, spec: MetricSpec | None = None) -> tuple[MeanStats, MeanStats]:
    """Per-group sample means and (n-1)-normalised variances.

    Returns ``(treated, control)``. For ratio metrics the ``z`` moments
    and the within-group covariance of ``(y, z)`` are filled in as well.
    """
    use_z = frame.z is not None and (spec is None or spec.kind is MetricKind.RATIO)
    t = frame.treated
    z = frame.z if use_z else None
    return (
        _group_stats(frame.y[t], None if z is None else z[t]),
        _group_stats(frame.y[~t], None if z is None else z[~t]),
    )
