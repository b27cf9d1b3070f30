"""Datasets, task partitions, the dataset text format and every toy/generator.

All downstream code assumes labels have been folded into the features
(``x <- y * x``, ``y <- +1``); the generators and ``load_dataset`` do this
by default.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np


class DatasetError(ValueError):
    """Malformed dataset contents or file."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class DataPoint(NamedTuple):
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class TaskPartition:
    index_sets: tuple[np.ndarray, ...]

    def __post_init__(self):
        sets = tuple(np.asarray(s, dtype=np.int64) for s in self.index_sets)
        object.__setattr__(self, "index_sets", sets)
        if not sets:
            raise DatasetError("partition needs at least one task")
        for m, s in enumerate(sets):
            if s.size == 0:
                raise DatasetError(f"task {m} is empty")
        allidx = np.concatenate(sets)
        if np.unique(allidx).size != allidx.size:
            raise DatasetError("task index sets overlap")
        if allidx.min() != 0 or allidx.max() != allidx.size - 1:
            raise DatasetError("task index sets do not cover [0, N)")

    @property
    def M(self) -> int:
        return len(self.index_sets)

    @property
    def N(self) -> int:
        return sum(s.size for s in self.index_sets)

    @classmethod
    def from_task_ids(cls, task_ids, M: int) -> "TaskPartition":
        task_ids = np.asarray(task_ids)
        return cls(tuple(np.flatnonzero(task_ids == m) for m in range(M)))

    def task_ids(self) -> np.ndarray:
        out = np.empty(self.N, dtype=np.int64)
        for m, s in enumerate(self.index_sets):
            out[s] = m
        return out


@dataclass(frozen=True)
class JointDataset:
    """N points in R^d with labels and a disjoint task partition.

    ``X`` has one row per point (shape ``(N, d)``).
    """

    X: np.ndarray
    y: np.ndarray
    partition: TaskPartition
    absorbed: bool = False
    note: str = ""

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        if X.ndim == 1:
            X = X[:, None]
        y = np.array(self.y, dtype=np.int64, copy=True)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise DatasetError(f"X must be a nonempty (N, d) array, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DatasetError("non-finite coordinate")
        if y.shape != (X.shape[0],):
            raise DatasetError("label vector length does not match number of points")
        if not np.all(np.abs(y) == 1):
            raise DatasetError("labels must be -1 or +1")
        if self.partition.N != X.shape[0]:
            raise DatasetError("partition size does not match number of points")
        if self.absorbed and np.any(y != 1):
            raise DatasetError("absorbed dataset must have all labels +1")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def M(self) -> int:
        return self.partition.M

    def task_indices(self, m: int) -> np.ndarray:
        return self.partition.index_sets[m]

    def task_X(self, m: int) -> np.ndarray:
        return self.X[self.partition.index_sets[m]]

    @property
    def points(self) -> list[DataPoint]:
        return [DataPoint(self.X[i], int(self.y[i])) for i in range(self.N)]

    def subset(self, m: int) -> "JointDataset":
        """Single-task dataset holding only task ``m``."""
        idx = self.task_indices(m)
        return JointDataset(self.X[idx], self.y[idx], TaskPartition((np.arange(idx.size),)),
                            absorbed=self.absorbed)

    def with_partition(self, partition: TaskPartition) -> "JointDataset":
        return replace(self, partition=partition)


def make_dataset(points, labels=None, tasks=None, M=None, note="", absorb=True) -> JointDataset:
    """Build a dataset from rows, optional labels (default +1) and task ids."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n = X.shape[0]
    y = np.ones(n, dtype=np.int64) if labels is None else np.asarray(labels)
    tasks = np.zeros(n, dtype=np.int64) if tasks is None else np.asarray(tasks)
    M = int(tasks.max()) + 1 if M is None else M
    ds = JointDataset(X, y, TaskPartition.from_task_ids(tasks, M), note=note)
    return absorb_labels(ds) if absorb else ds


def absorb_labels(ds: JointDataset) -> JointDataset:
    if ds.absorbed:
        raise DatasetError("labels already absorbed")
    X = ds.X * ds.y[:, None]
    return JointDataset(X, np.ones(ds.N, dtype=np.int64), ds.partition, absorbed=True, note=ds.note)


# -- text format ---------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def format_dataset(ds: JointDataset) -> str:
    lines = []
    for line in ds.note.splitlines():
        lines.append(f"# {line}".rstrip())
    lines.append(f"{ds.d} {ds.N} {ds.M}")
    tids = ds.partition.task_ids()
    for i in range(ds.N):
        coords = " ".join(_fmt(v) for v in ds.X[i])
        lines.append(f"{tids[i]} {int(ds.y[i])} {coords}")
    return "\n".join(lines) + "\n"


def save_dataset(ds: JointDataset, path) -> None:
    Path(path).write_text(format_dataset(ds))


def parse_dataset(text: str, absorb: bool = True) -> JointDataset:
    header = None
    rows, labels, tids = [], [], []
    notes = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if header is None:
                notes.append(line[1:].strip())
            continue
        fields = line.split()
        if header is None:
            try:
                header = tuple(int(f) for f in fields)
            except ValueError:
                raise DatasetError(f"header must be three integers 'd N M', got {line!r}", lineno)
            if len(header) != 3 or min(header) < 1:
                raise DatasetError(f"header must be three positive integers 'd N M', got {line!r}", lineno)
            continue
        d, N, M = header
        if len(fields) != d + 2:
            raise DatasetError(f"expected {d + 2} fields, got {len(fields)}", lineno)
        try:
            tid = int(fields[0])
            lab = int(fields[1])
        except ValueError:
            raise DatasetError("task id and label must be integers", lineno)
        if not 0 <= tid < M:
            raise DatasetError(f"task id {tid} outside [0, {M})", lineno)
        if lab not in (-1, 1):
            raise DatasetError(f"label {lab} not in {{-1, 1}}", lineno)
        try:
            coords = [float(f) for f in fields[2:]]
        except ValueError:
            raise DatasetError("non-numeric coordinate", lineno)
        if not all(math.isfinite(c) for c in coords):
            raise DatasetError("non-finite coordinate", lineno)
        rows.append(coords)
        labels.append(lab)
        tids.append(tid)
    if header is None:
        raise DatasetError("missing header")
    d, N, M = header
    if len(rows) != N:
        raise DatasetError(f"header declares {N} points, found {len(rows)}")
    ds = JointDataset(np.array(rows).reshape(N, d), np.array(labels),
                      TaskPartition.from_task_ids(tids, M), note="\n".join(notes))
    return absorb_labels(ds) if absorb else ds


def load_dataset(path, absorb: bool = True) -> JointDataset:
    return parse_dataset(Path(path).read_text(), absorb=absorb)


# -- toy datasets ------------------------------------------------------------------

def make_fig1_toy() -> JointDataset:
    """Two tasks in R^3 whose joint max-margin direction is (1, 0, 0)."""
    pts = [(1, 1, 0), (1, -2, 1), (1, 0, 1), (1, 1, -2)]
    return make_dataset(pts, tasks=[0, 0, 1, 1], note="two tasks in R^3")


FIG3_POINTS = [(1, 2), (1.1, 1.8), (1.2, 1.9), (1, -2), (1.1, -1.8), (1.2, -1.9)]
FIG3_SPLITS = {
    "contradicting": [0, 0, 0, 1, 1, 1],
    # reconstruction: each task mixes upper and lower points
    "aligned": [0, 1, 0, 1, 0, 1],
}


def make_fig3_dataset(split: str = "contradicting") -> JointDataset:
    if split not in FIG3_SPLITS:
        raise ValueError(f"split must be one of {sorted(FIG3_SPLITS)}")
    tasks = FIG3_SPLITS[split]
    desc = "; ".join(f"task {m}: " + ", ".join(str(p) for p, t in zip(FIG3_POINTS, tasks) if t == m)
                     for m in (0, 1))
    return make_dataset(FIG3_POINTS, tasks=tasks, note=f"{split} split ({desc})")


def make_c3_toy() -> JointDataset:
    """Five singleton tasks whose joint loss can rise during a cycle."""
    pts = [(1, -2), (1, 2), (1.1, 2.1), (1.1, 2.2), (1.1, 2.3)]
    return make_dataset(pts, tasks=range(5), note="loss-bump toy: five singleton tasks")


# -- 2-D generators --------------------------------------------------------------

@dataclass(frozen=True)
class Disk:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DatasetError("disk radius must be positive")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        r = self.radius * np.sqrt(rng.uniform(size=n))
        a = rng.uniform(0.0, 2 * np.pi, size=n)
        return np.column_stack([self.center[0] + r * np.cos(a), self.center[1] + r * np.sin(a)])

    def contains(self, p, tol=1e-12) -> bool:
        return math.dist(p, self.center) <= self.radius + tol


@dataclass(frozen=True)
class Rect:
    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        if not all(h > l for l, h in zip(self.lo, self.hi)):
            raise DatasetError("rectangle must have positive area")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, 2))

    def contains(self, p, tol=1e-12) -> bool:
        return all(l - tol <= v <= h + tol for v, l, h in zip(p, self.lo, self.hi))


@dataclass(frozen=True)
class PinnedPoint:
    task: int
    x: tuple[float, float]
    y: int


@dataclass(frozen=True)
class Generator2D:
    """Per-task, per-label uniform regions; ``regions[m] = (positive, negative)``."""

    regions: tuple[tuple[Disk | Rect, Disk | Rect], ...]
    n_per_task: int = 100
    pinned: tuple[PinnedPoint, ...] = ()
    seed: int | None = 0

    def __post_init__(self):
        if self.n_per_task < 1:
            raise DatasetError("n_per_task must be positive")
        for p in self.pinned:
            region = self.regions[p.task][0 if p.y == 1 else 1]
            if not region.contains(p.x):
                raise DatasetError(f"pinned point {p.x} lies outside its task-{p.task} region")

    @property
    def M(self) -> int:
        return len(self.regions)


def three_task_2d_generator(seed: int | None = 0, n_per_task: int = 100) -> Generator2D:
    """The three-task 2-D distributions whose joint max-margin direction is (1,1)/sqrt(2)."""
    regions = (
        (Disk((0.6, 4.5), 0.9), Rect((0.0, -3.9), (1.5, -2.7))),
        (Disk((5.1, 0.0), 0.75), Rect((-4.2, -0.9), (-2.1, 0.9))),
        (Rect((0.6, 0.6), (3.0, 2.7)), Disk((-3.0, -2.4), 1.2)),
    )
    pinned = (
        PinnedPoint(0, (1.5, -2.7), -1),
        PinnedPoint(1, (-2.1, 0.9), -1),
        PinnedPoint(2, (0.6, 0.6), 1),
    )
    return Generator2D(regions, n_per_task=n_per_task, pinned=pinned, seed=seed)


def _draw(gen: Generator2D, rng: np.random.Generator, pin: bool) -> JointDataset:
    X, y, tasks = [], [], []
    for m, (pos, neg) in enumerate(gen.regions):
        lab = rng.choice(np.array([-1, 1]), size=gen.n_per_task)
        pts = np.empty((gen.n_per_task, 2))
        npos = int(np.sum(lab == 1))
        pts[lab == 1] = pos.sample(rng, npos)
        pts[lab == -1] = neg.sample(rng, gen.n_per_task - npos)
        if pin:
            for p in gen.pinned:
                if p.task == m:
                    j = int(rng.integers(gen.n_per_task))
                    pts[j] = p.x
                    lab[j] = p.y
        X.append(pts)
        y.append(lab)
        tasks.append(np.full(gen.n_per_task, m))
    return make_dataset(np.vstack(X), np.concatenate(y), np.concatenate(tasks), M=gen.M)


@dataclass(frozen=True)
class ResampledTasks:
    """Online mode: a fresh draw of every task distribution at each stage."""

    gen: Generator2D

    def dataset_for_stage(self, t: int) -> JointDataset:
        rng = np.random.default_rng([self.gen.seed, t])
        return _draw(self.gen, rng, pin=False)

    @property
    def M(self) -> int:
        return self.gen.M

    @property
    def d(self) -> int:
        return 2


def sample_2d_tasks(gen: Generator2D, resample: bool = False):
    """Fixed dataset (with pinned support points) or a per-stage resampling provider."""
    if resample:
        if gen.seed is None:
            raise DatasetError("resample mode requires a seed")
        return ResampledTasks(gen)
    rng = np.random.default_rng(gen.seed)
    return _draw(gen, rng, pin=True)


def make_nonseparable(overlap: float = 1.0, seed: int = 0, n_per_task: int = 20, M: int = 2,
                      radius: float = 1.0, offset: float = 1.0, max_tries: int = 20,
                      min_b: float = 1e-3, pair_jitter: float | None = None) -> JointDataset:
    """2-D opposing-label disks; ``overlap=1`` gives identical supports.

    Positive points come from a disk centred at ``(h, offset)`` and negative
    ones from ``(-h, offset)`` with ``h = radius * (1 - overlap)``; at
    ``overlap -> 0`` the disks touch and the data become separable.

    With ``pair_jitter`` set, each task is built from antithetic pairs: every
    positive point gets a negative twin at the mirrored disk position plus
    Gaussian noise of that scale.  Tasks then share (nearly) the same
    minimiser, so per-task gradients at the joint minimiser are small.
    """
    from .geometry import nonseparability_coefficient_b

    if not 0 < overlap <= 1:
        raise DatasetError("overlap must lie in (0, 1]")
    h = radius * (1 - overlap)
    pos, neg = Disk((h, offset), radius), Disk((-h, offset), radius)
    gen = Generator2D(tuple((pos, neg) for _ in range(M)), n_per_task=n_per_task, seed=seed)
    ss = np.random.SeedSequence(seed)
    if pair_jitter is not None and (pair_jitter < 0 or n_per_task % 2):
        raise DatasetError("paired mode needs pair_jitter >= 0 and an even n_per_task")
    for child in ss.spawn(max_tries):
        rng = np.random.default_rng(child)
        if pair_jitter is None:
            ds = _draw(gen, rng, pin=False)
        else:
            ds = _draw_pairs(pos, h, M, n_per_task // 2, pair_jitter, rng)
        if np.linalg.matrix_rank(ds.X) < ds.d:
            continue
        if nonseparability_coefficient_b(ds) > min_b:
            tag = "" if pair_jitter is None else f" pair_jitter={pair_jitter}"
            return replace(ds, note=f"nonseparable overlap={overlap} seed={seed}{tag}")
    raise DatasetError(f"no strictly non-separable full-rank sample after {max_tries} tries")


def _draw_pairs(pos: Disk, h: float, M: int, n_pairs: int, jitter: float,
                rng: np.random.Generator) -> JointDataset:
    X, y, tasks = [], [], []
    for m in range(M):
        p = pos.sample(rng, n_pairs)
        q = p - np.array([2 * h, 0.0]) + jitter * rng.standard_normal(p.shape)
        X += [p, q]
        y += [np.ones(n_pairs), -np.ones(n_pairs)]
        tasks.append(np.full(2 * n_pairs, m))
    return make_dataset(np.vstack(X), np.concatenate(y), np.concatenate(tasks), M=M)
