"""Piecewise-linear value function approximations as collections of cuts.

Each stage t < T keeps one cut list per post-decision information state
(a single list under stagewise independence).  A cut stores its intercept
*at the anchor point*, which keeps the constants that end up on subproblem
right-hand sides small even when slopes and anchors are large.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, FormatVersionError, MalformedFileError
from .model import canonical_json
from .subproblem import SubproblemSpec

CUTS_FORMAT = "mslp-cuts"
CUTS_VERSION = 1


@dataclass(frozen=True)
class Cut:
    """Affine lower bound ``alpha + beta . (R - anchor)`` on a stage value
    function, recorded with the iteration that produced it."""

    alpha: float
    beta: np.ndarray
    anchor: np.ndarray
    born_iteration: int

    def __post_init__(self):
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        object.__setattr__(self, "born_iteration", int(self.born_iteration))
        if self.beta.ndim != 1 or self.anchor.shape != self.beta.shape:
            raise DimensionMismatch("cut slope and anchor must be equal-length vectors")
        if not (
            np.isfinite(self.alpha)
            and np.all(np.isfinite(self.beta))
            and np.all(np.isfinite(self.anchor))
        ):
            raise ValueError("cut entries must be finite")

    def value_at(self, R: np.ndarray) -> float:
        return self.alpha + float(self.beta @ (np.asarray(R, dtype=float) - self.anchor))

    def same_as(self, other: "Cut") -> bool:
        return (
            self.alpha == other.alpha
            and np.array_equal(self.beta, other.beta)
            and np.array_equal(self.anchor, other.anchor)
            and self.born_iteration == other.born_iteration
        )


@dataclass
class _Bucket:
    cuts: list[Cut] = field(default_factory=list)
    # Stacked copies of the cut data, rebuilt lazily after additions.
    _alphas: np.ndarray | None = None
    _betas: np.ndarray | None = None
    _offsets: np.ndarray | None = None

    def add(self, cut: Cut) -> None:
        self.cuts.append(cut)
        self._alphas = None

    def stacked(self, dim: int):
        if self._alphas is None:
            self._alphas = np.array([c.alpha for c in self.cuts])
            self._betas = np.array([c.beta for c in self.cuts]).reshape(-1, dim)
            self._offsets = self._alphas - np.einsum(
                "ij,ij->i", self._betas, np.array([c.anchor for c in self.cuts]).reshape(-1, dim)
            )
        return self._alphas, self._betas, self._offsets


class CutPool:
    """Append-only cut storage keyed by stage and information state."""

    def __init__(self, resource_dims, n_info):
        self.resource_dims = tuple(int(r) for r in resource_dims)
        self.n_info = tuple(int(k) for k in n_info)
        if len(self.n_info) != len(self.resource_dims):
            raise DimensionMismatch("n_info and resource_dims must align per stage")
        self._buckets = [
            [_Bucket() for _ in range(k)] for k in self.n_info
        ]

    @classmethod
    def for_problem(cls, problem) -> "CutPool":
        return cls(
            resource_dims=problem.resource_dims,
            n_info=tuple(problem.n_info_states(t) for t in range(problem.T)),
        )

    @property
    def n_stages(self) -> int:
        return len(self.resource_dims)

    def cuts_at(self, t: int, info_index: int) -> list[Cut]:
        return self._buckets[t][info_index].cuts

    def n_cuts(self, t: int, info_index: int) -> int:
        return len(self._buckets[t][info_index].cuts)

    def total_cuts(self) -> int:
        return sum(len(b.cuts) for stage in self._buckets for b in stage)

    def iter_cuts(self):
        for t, stage in enumerate(self._buckets):
            for info, bucket in enumerate(stage):
                for cut in bucket.cuts:
                    yield t, info, cut

    def add_cut(self, t: int, info_index: int, cut: Cut) -> None:
        if cut.beta.shape[0] != self.resource_dims[t]:
            raise DimensionMismatch(
                f"cut slope has dimension {cut.beta.shape[0]}, stage {t} "
                f"expects {self.resource_dims[t]}"
            )
        self._buckets[t][info_index].add(cut)

    def evaluate(self, t: int, info_index: int, R) -> float | None:
        """Max over cuts at R; ``None`` when the collection is empty (the
        callers then omit the future-value term entirely)."""
        R = np.asarray(R, dtype=float)
        if R.shape != (self.resource_dims[t],):
            raise DimensionMismatch(
                f"R has shape {R.shape}, stage {t} expects ({self.resource_dims[t]},)"
            )
        bucket = self._buckets[t][info_index]
        if not bucket.cuts:
            return None
        alphas, betas, offsets = bucket.stacked(self.resource_dims[t])
        return float((offsets + betas @ R).max())

    def embed(
        self, t: int, info_index: int, stage_spec: SubproblemSpec, B: np.ndarray
    ) -> SubproblemSpec:
        """Augment a stage spec with the epigraph variable and one equality
        row per cut.

        Column layout of the result: the stage's own variables, then
        theta+ and theta-, then one surplus slack per cut.  With no cuts the
        spec is returned unchanged (the empty approximation contributes no
        term).
        """
        if stage_spec.quad is not None:
            raise ValueError("embed expects an unregularized stage spec")
        bucket = self._buckets[t][info_index]
        k = len(bucket.cuts)
        if k == 0:
            return stage_spec
        B = np.asarray(B, dtype=float)
        r = self.resource_dims[t]
        if B.shape[0] != r:
            raise DimensionMismatch(
                f"linking matrix has {B.shape[0]} rows, stage {t} expects {r}"
            )
        m, n = stage_spec.A.shape
        if B.shape[1] != n:
            raise DimensionMismatch(
                f"linking matrix has {B.shape[1]} columns, stage has {n} variables"
            )
        alphas, betas, offsets = bucket.stacked(r)
        slopes = betas @ B  # k x n

        A_aug = np.zeros((m + k, n + 2 + k))
        A_aug[:m, :n] = stage_spec.A
        A_aug[m:, :n] = -slopes
        A_aug[m:, n] = 1.0
        A_aug[m:, n + 1] = -1.0
        A_aug[m + np.arange(k), n + 2 + np.arange(k)] = -1.0

        rhs_aug = np.concatenate([stage_spec.rhs, offsets])
        c_aug = np.concatenate([stage_spec.c, [1.0, -1.0], np.zeros(k)])
        return SubproblemSpec(c=c_aug, A=A_aug, rhs=rhs_aug)

    def same_as(self, other: "CutPool") -> bool:
        if (
            self.resource_dims != other.resource_dims
            or self.n_info != other.n_info
        ):
            return False
        for t in range(self.n_stages):
            for i in range(self.n_info[t]):
                mine = self.cuts_at(t, i)
                theirs = other.cuts_at(t, i)
                if len(mine) != len(theirs):
                    return False
                if not all(a.same_as(b) for a, b in zip(mine, theirs)):
                    return False
        return True

    # --- cut file format ---------------------------------------------------

    def to_obj(self) -> dict:
        return {
            "format": CUTS_FORMAT,
            "version": CUTS_VERSION,
            "resource_dims": list(self.resource_dims),
            "n_info": list(self.n_info),
            "cuts": [
                {
                    "t": t,
                    "info": info,
                    "alpha": cut.alpha,
                    "beta": cut.beta.tolist(),
                    "anchor": cut.anchor.tolist(),
                    "born_iteration": cut.born_iteration,
                }
                for t, info, cut in self.iter_cuts()
            ],
        }

    @classmethod
    def from_obj(cls, obj: dict) -> "CutPool":
        if obj.get("format") != CUTS_FORMAT:
            raise FormatVersionError(
                f"not a cut file (format field: {obj.get('format')!r})"
            )
        if obj.get("version") != CUTS_VERSION:
            raise FormatVersionError(f"unsupported cut file version {obj.get('version')!r}")
        pool = cls(resource_dims=obj["resource_dims"], n_info=obj["n_info"])
        for rec in obj["cuts"]:
            pool.add_cut(
                int(rec["t"]),
                int(rec["info"]),
                Cut(
                    alpha=rec["alpha"],
                    beta=np.array(rec["beta"], dtype=float),
                    anchor=np.array(rec["anchor"], dtype=float),
                    born_iteration=rec["born_iteration"],
                ),
            )
        return pool

    def save(self, path) -> None:
        Path(path).write_text(canonical_json(self.to_obj()))


def load_cuts(path) -> CutPool:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFileError(f"cannot parse cut file {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise MalformedFileError(f"cut file {path} is not a JSON object")
    try:
        return CutPool.from_obj(obj)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatVersionError):
            raise
        raise MalformedFileError(f"cut file {path} is malformed: {exc}") from exc


def save_cuts(pool: CutPool, path) -> None:
    pool.save(path)
