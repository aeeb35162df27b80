"""Sequential task streams (synthetic Gaussian blobs or CSV files) and
class/task-incremental evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from pdcl.nncore import Batch, MlpSpec, forward


class StreamConfigError(ValueError):
    pass


class CsvParseError(ValueError):
    pass


@dataclass
class Task:
    train: Batch
    test: Batch
    classes: tuple[int, ...]
    # ids of training samples whose labels were deliberately flipped
    flipped_ids: tuple[int, ...] = ()


@dataclass
class TaskStream:
    tasks: list[Task]
    input_dim: int
    n_classes: int

    @property
    def n_tasks(self) -> int:
        return len(self.tasks)

    def __post_init__(self):
        seen: set[int] = set()
        all_ids: list[np.ndarray] = []
        for task in self.tasks:
            cls = set(task.classes)
            if cls & seen:
                raise StreamConfigError("task class sets must be pairwise disjoint")
            seen |= cls
            for split in (task.train, task.test):
                if not set(np.unique(split.y)) <= cls:
                    raise StreamConfigError("labels outside the task's class set")
                all_ids.append(split.ids)
        ids = np.concatenate(all_ids)
        if len(np.unique(ids)) != len(ids):
            raise StreamConfigError("sample ids must be unique across the stream")


@dataclass
class DifficultyProfile:
    """Per-task class separation (Gaussian mean distance), sample counts, noise."""

    separations: tuple[float, ...]
    samples_per_task: tuple[int, ...]
    noise: float = 1.0

    def __post_init__(self):
        self.separations = tuple(float(s) for s in np.atleast_1d(self.separations))
        self.samples_per_task = tuple(int(n) for n in np.atleast_1d(self.samples_per_task))
        if any(s <= 0 for s in self.separations):
            raise StreamConfigError("separations must be positive")
        if any(n < 10 for n in self.samples_per_task):
            raise StreamConfigError("need at least 10 samples per task")

    @staticmethod
    def uniform(n_tasks: int, separation: float, samples_per_task: int, noise: float = 1.0):
        return DifficultyProfile(
            separations=(separation,) * n_tasks,
            samples_per_task=(samples_per_task,) * n_tasks,
            noise=noise,
        )


def _split_80_20(x, y, ids, rng):
    n = len(y)
    perm = rng.permutation(n)
    n_train = int(round(0.8 * n))
    tr, te = perm[:n_train], perm[n_train:]
    return Batch(x[tr], y[tr], ids[tr]), Batch(x[te], y[te], ids[te])


def make_synthetic_stream(
    n_tasks: int,
    profile: DifficultyProfile,
    input_dim: int,
    classes_per_task: int,
    seed: int,
    label_flip_fraction: float = 0.0,
    layout: str = "random",
) -> TaskStream:
    """Gaussian-blob tasks with disjoint label ranges and an 80/20 split.

    Task t holds classes ``[t*cpt, (t+1)*cpt)``; its class means sit at
    pairwise distance ``profile.separations[t]``. ``label_flip_fraction``
    optionally mislabels that fraction of *training* samples (uniformly at
    random, to another class of the same task), for outlier experiments.

    ``layout`` places the class means: ``"random"`` draws a random base
    point and random orthonormal directions per task, so streams from
    different seeds differ in how much tasks geometrically overlap;
    ``"orthogonal"`` assigns every class its own fixed coordinate axis
    (requires ``input_dim >= n_tasks * classes_per_task``), so tasks
    interact only through shared model capacity and the stream's
    difficulty ordering is controlled by the separations alone.
    """
    if n_tasks < 1:
        raise StreamConfigError("need at least one task")
    if classes_per_task < 2:
        raise StreamConfigError("need at least two classes per task")
    if classes_per_task > input_dim:
        raise StreamConfigError("classes_per_task cannot exceed input_dim")
    if len(profile.separations) != n_tasks or len(profile.samples_per_task) != n_tasks:
        raise StreamConfigError("profile length must match the task count")
    if layout not in ("random", "orthogonal"):
        raise StreamConfigError(f"unknown layout: {layout!r}")
    if layout == "orthogonal" and n_tasks * classes_per_task > input_dim:
        raise StreamConfigError("orthogonal layout needs input_dim >= n_tasks * classes_per_task")

    rng = np.random.default_rng(seed)
    tasks = []
    next_id = 0
    for t in range(n_tasks):
        sep = profile.separations[t]
        n_total = profile.samples_per_task[t]
        per_class = n_total // classes_per_task

        # Orthonormal directions give equidistant class means at distance sep.
        if layout == "orthogonal":
            centers = np.zeros((classes_per_task, input_dim))
            for j in range(classes_per_task):
                centers[j, t * classes_per_task + j] = sep / np.sqrt(2.0)
        else:
            raw = rng.normal(size=(input_dim, classes_per_task))
            q, _ = np.linalg.qr(raw)
            base = rng.normal(scale=1.0, size=input_dim)
            centers = base + (sep / np.sqrt(2.0)) * q.T

        xs, ys = [], []
        for j in range(classes_per_task):
            pts = centers[j] + profile.noise * rng.normal(size=(per_class, input_dim))
            xs.append(pts)
            ys.append(np.full(per_class, t * classes_per_task + j, dtype=np.int64))
        x = np.vstack(xs)
        y = np.concatenate(ys)
        ids = np.arange(next_id, next_id + len(y), dtype=np.int64)
        next_id += len(y)

        train, test = _split_80_20(x, y, ids, rng)
        flipped: tuple[int, ...] = ()
        if label_flip_fraction > 0.0:
            n_flip = int(round(label_flip_fraction * len(train)))
            flip_idx = rng.choice(len(train), size=n_flip, replace=False)
            lo = t * classes_per_task
            for i in flip_idx:
                others = [c for c in range(lo, lo + classes_per_task) if c != train.y[i]]
                train.y[i] = others[rng.integers(len(others))]
            flipped = tuple(int(i) for i in train.ids[flip_idx])
        classes = tuple(range(t * classes_per_task, (t + 1) * classes_per_task))
        tasks.append(Task(train=train, test=test, classes=classes, flipped_ids=flipped))

    return TaskStream(tasks=tasks, input_dim=input_dim, n_classes=n_tasks * classes_per_task)


def make_split_stream(
    csv_path,
    n_tasks: int,
    classes_per_task: int,
    per_class_cap: float = np.inf,
    seed: int = 0,
) -> TaskStream:
    """Split a CSV dataset (rows ``label,feat_0,...``) into sequential tasks.

    Classes are assigned to tasks in ascending label order; training rows
    per class are capped at ``per_class_cap`` by uniform subsampling.
    """
    rows_x, rows_y = [], []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                label = int(row[0])
                feats = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise CsvParseError(f"{csv_path}:{lineno}: malformed row ({exc})") from exc
            if not feats:
                raise CsvParseError(f"{csv_path}:{lineno}: row has no features")
            rows_y.append(label)
            rows_x.append(feats)
    if not rows_y:
        raise CsvParseError(f"{csv_path}: empty file")

    x = np.asarray(rows_x, dtype=np.float64)
    y = np.asarray(rows_y, dtype=np.int64)
    labels = np.unique(y)
    needed = n_tasks * classes_per_task
    if len(labels) < needed:
        raise StreamConfigError(
            f"need {needed} classes for {n_tasks} tasks, file has {len(labels)}"
        )

    rng = np.random.default_rng(seed)
    ids = np.arange(len(y), dtype=np.int64)
    tasks = []
    for t in range(n_tasks):
        task_labels = labels[t * classes_per_task : (t + 1) * classes_per_task]
        mask = np.isin(y, task_labels)
        train, test = _split_80_20(x[mask], y[mask], ids[mask], rng)

        keep = []
        for lbl in task_labels:
            idx = np.flatnonzero(train.y == lbl)
            if len(idx) > per_class_cap:
                idx = rng.choice(idx, size=int(per_class_cap), replace=False)
            keep.append(idx)
        train = train.take(np.sort(np.concatenate(keep)))
        tasks.append(Task(train=train, test=test, classes=tuple(int(l) for l in task_labels)))

    return TaskStream(tasks=tasks, input_dim=x.shape[1], n_classes=needed)


def evaluate(
    spec: MlpSpec,
    theta: np.ndarray,
    stream: TaskStream,
    upto_task: int,
    mode: str,
) -> np.ndarray:
    """Per-task test accuracy for tasks 0..upto_task-1.

    CIL takes the argmax over all logits; TIL masks logits outside the
    evaluated task's class set. Argmax ties break to the lowest class index.
    """
    if mode not in ("CIL", "TIL"):
        raise ValueError("mode must be 'CIL' or 'TIL'")
    if not 1 <= upto_task <= stream.n_tasks:
        raise ValueError("upto_task out of range")
    accs = np.empty(upto_task, dtype=np.float64)
    for t in range(upto_task):
        task = stream.tasks[t]
        logits = forward(spec, theta, task.test.x)
        if mode == "TIL":
            mask = np.full(logits.shape[1], -np.inf)
            mask[list(task.classes)] = 0.0
            logits = logits + mask
        pred = np.argmax(logits, axis=1)
        accs[t] = float(np.mean(pred == task.test.y))
    return accs
