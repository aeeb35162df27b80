"""Replay-buffer storage and partition/selection mechanisms.

Contains the multiplier-weighted buffer partition solver, random and
dual-variable-driven slot filling, and the Ring / Reservoir baselines.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from pdcl.nncore import Batch

N_MIN_DEFAULT = 3  # smallest integer n where sqrt(ln n / n) is decreasing


class PartitionConfigError(ValueError):
    pass


def zeta(n) -> float:
    """Sample-complexity surrogate sqrt(ln n / n), defined for n >= 1."""
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 1):
        raise ValueError("zeta requires n >= 1")
    out = np.sqrt(np.log(n) / n)
    return float(out) if out.ndim == 0 else out


@dataclass
class PartitionSolution:
    n: np.ndarray  # integer allocation per task
    objective: float

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=np.int64)


def effective_weights(lam) -> np.ndarray:
    """Partition weights from task multipliers: the current (last) task's
    loss appears in both the objective and its own constraint, so its
    weight is ``lam_t + 1``; past tasks keep ``lam_k``."""
    lam_eff = np.asarray(lam, dtype=np.float64).copy()
    if len(lam_eff) == 0:
        raise PartitionConfigError("need at least one task")
    lam_eff[-1] += 1.0
    return lam_eff


def solve_partition(lam, capacity: int, n_min: int = N_MIN_DEFAULT) -> PartitionSolution:
    """Optimal integer buffer partition.

    Minimizes ``sum_k lam_k * zeta(n_k)`` subject to ``sum n_k = capacity``
    and ``n_k >= n_min``. ``lam`` holds the effective weights (see
    ``effective_weights`` for the current-task replacement).

    Solved exactly by dynamic programming over the integer budget, then
    allocations are matched to weights by rank so that a strictly larger
    weight never receives a smaller slot.
    """
    lam = np.asarray(lam, dtype=np.float64)
    t = len(lam)
    if t < 1:
        raise PartitionConfigError("need at least one task")
    if np.any(lam < 0):
        raise PartitionConfigError("multipliers must be nonnegative")
    if n_min < 1:
        raise PartitionConfigError("n_min must be at least 1")
    if capacity < t * n_min:
        raise PartitionConfigError(
            f"capacity {capacity} cannot hold {t} slots of at least {n_min}"
        )

    lam_eff = lam

    # Sort weights descending (stable) so equal weights keep index order.
    order = np.argsort(-lam_eff, kind="stable")
    sorted_lam = lam_eff[order]

    sizes = np.arange(capacity + 1, dtype=np.float64)
    zeta_tab = np.full(capacity + 1, np.inf)
    zeta_tab[n_min:] = np.sqrt(np.log(sizes[n_min:]) / sizes[n_min:])

    # dp[b] = min cost of allocating budget b over tasks processed so far.
    dp = np.full(capacity + 1, np.inf)
    dp[n_min:] = sorted_lam[0] * zeta_tab[n_min:]
    choice = [np.arange(capacity + 1)]
    for k in range(1, t):
        costs = np.full(capacity + 1, np.inf)
        costs[n_min:] = sorted_lam[k] * zeta_tab[n_min:]
        new_dp = np.full(capacity + 1, np.inf)
        new_choice = np.zeros(capacity + 1, dtype=np.int64)
        for b in range(k * n_min + n_min, capacity + 1):
            # slot k takes n in [n_min, b - k*n_min]
            hi = b - k * n_min
            cand = costs[n_min : hi + 1] + dp[b - n_min : b - hi - 1 : -1]
            j = int(np.argmin(cand))
            new_dp[b] = cand[j]
            new_choice[b] = n_min + j
        dp = new_dp
        choice.append(new_choice)

    n_sorted = np.zeros(t, dtype=np.int64)
    b = capacity
    for k in range(t - 1, 0, -1):
        n_sorted[k] = choice[k][b]
        b -= n_sorted[k]
    n_sorted[0] = b

    # Rearrangement: largest allocation to largest weight is never worse.
    n_sorted = np.sort(n_sorted)[::-1]
    n = np.zeros(t, dtype=np.int64)
    n[order] = n_sorted
    objective = float(np.sum(lam_eff * zeta_tab[n]))
    return PartitionSolution(n=n, objective=objective)


@dataclass
class Slot:
    """Stored examples of one task, with the dual weight recorded at storage."""

    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    lam: np.ndarray

    @staticmethod
    def empty(input_dim: int) -> "Slot":
        return Slot(
            x=np.empty((0, input_dim)),
            y=np.empty(0, dtype=np.int64),
            ids=np.empty(0, dtype=np.int64),
            lam=np.empty(0),
        )

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "Slot":
        return Slot(self.x[idx], self.y[idx], self.ids[idx], self.lam[idx])

    def as_batch(self) -> Batch:
        return Batch(self.x, self.y, self.ids)


@dataclass
class ReplayBuffer:
    """Capacity-bounded store partitioned into per-task slots."""

    capacity: int
    input_dim: int
    slots: dict[int, Slot] = field(default_factory=dict)

    def counts(self) -> dict[int, int]:
        return {k: len(s) for k, s in self.slots.items()}

    def total(self) -> int:
        return sum(len(s) for s in self.slots.values())

    def task_batch(self, task: int) -> Batch:
        return self.slots[task].as_batch()

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            for task in sorted(self.slots):
                slot = self.slots[task]
                for i in range(len(slot)):
                    writer.writerow(
                        [task, slot.ids[i], slot.y[i], f"{slot.lam[i]:.17g}"]
                        + [f"{v:.17g}" for v in slot.x[i]]
                    )

    @staticmethod
    def from_csv(path, capacity: int, input_dim: int) -> "ReplayBuffer":
        rows: dict[int, list] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                rows.setdefault(int(row[0]), []).append(row)
        buf = ReplayBuffer(capacity=capacity, input_dim=input_dim)
        for task, items in rows.items():
            buf.slots[task] = Slot(
                x=np.array([[float(v) for v in r[4:]] for r in items]),
                y=np.array([int(r[2]) for r in items], dtype=np.int64),
                ids=np.array([int(r[1]) for r in items], dtype=np.int64),
                lam=np.array([float(r[3]) for r in items]),
            )
        return buf


def _balanced_class_quota(labels: np.ndarray, classes, n_target: int) -> dict[int, int]:
    """Split n_target across classes as evenly as availability allows."""
    avail = {c: int(np.sum(labels == c)) for c in classes}
    quota = {c: 0 for c in classes}
    remaining = n_target
    # round-robin over classes ordered by label keeps per-class counts within 1
    open_classes = [c for c in classes if avail[c] > 0]
    while remaining > 0 and open_classes:
        share = max(1, remaining // len(open_classes))
        for c in list(open_classes):
            give = min(share, avail[c] - quota[c], remaining)
            quota[c] += give
            remaining -= give
            if quota[c] == avail[c]:
                open_classes.remove(c)
            if remaining == 0:
                break
    return quota


def _shrink_random(slot: Slot, n_target: int, rng) -> Slot:
    keep = rng.choice(len(slot), size=n_target, replace=False)
    return slot.take(np.sort(keep))


def _shrink_top_lambda(slot: Slot, n_target: int) -> Slot:
    # highest stored dual weight first; ties broken by lowest id
    order = np.lexsort((slot.ids, -slot.lam))
    return slot.take(np.sort(order[:n_target]))


def fill_buffer_random(
    buf: ReplayBuffer,
    task_index: int,
    train: Batch,
    classes,
    partition: PartitionSolution,
    rng,
) -> ReplayBuffer:
    """Resize slots to the partition, drawing the current task's slot
    uniformly at random, class-balanced. Past-slot shrinkage drops a uniform
    random subset; any past-slot deficit is refilled with current-task
    samples (the current task's dataset is fully available).
    """
    n = partition.n
    deficit = 0
    for k in range(task_index):
        slot = buf.slots.get(k, Slot.empty(buf.input_dim))
        target = int(n[k])
        if target < len(slot):
            buf.slots[k] = _shrink_random(slot, target, rng)
        elif target > len(slot):
            deficit += target - len(slot)
    target_t = int(n[task_index]) + deficit
    if target_t > len(train):
        warnings.warn(
            f"requested {target_t} samples from a task with {len(train)}; filling to availability"
        )
        target_t = len(train)

    quota = _balanced_class_quota(train.y, classes, target_t)
    picks = []
    for c in classes:
        idx = np.flatnonzero(train.y == c)
        picks.append(rng.choice(idx, size=quota[c], replace=False))
    idx = np.sort(np.concatenate(picks)) if picks else np.empty(0, dtype=np.int64)
    sel = train.take(idx)
    buf.slots[task_index] = Slot(sel.x, sel.y, sel.ids, np.zeros(len(sel)))
    return buf


def fill_buffer_dual(
    buf: ReplayBuffer,
    task_index: int,
    train: Batch,
    classes,
    partition: PartitionSolution,
    sample_duals: dict[int, float],
    discard_quantile: float = 0.01,
    rng=None,
) -> ReplayBuffer:
    """Dual-variable-driven fill: per class, discard the top
    ``discard_quantile`` fraction by sample dual (outlier guard), then keep
    the highest-dual remainder. Past slots shrink keeping their highest
    stored duals. Falls back to random filling when all duals are zero.
    """
    lam = np.array([sample_duals.get(int(i), 0.0) for i in train.ids])
    if not np.any(lam > 0):
        warnings.warn("all sample duals are zero; falling back to random fill")
        if rng is None:
            rng = np.random.default_rng(0)
        buf = fill_buffer_random(buf, task_index, train, classes, partition, rng)
        return buf

    n = partition.n
    deficit = 0
    for k in range(task_index):
        slot = buf.slots.get(k, Slot.empty(buf.input_dim))
        target = int(n[k])
        if target < len(slot):
            buf.slots[k] = _shrink_top_lambda(slot, target)
        elif target > len(slot):
            deficit += target - len(slot)
    target_t = int(n[task_index]) + deficit
    if target_t > len(train):
        warnings.warn(
            f"requested {target_t} samples from a task with {len(train)}; filling to availability"
        )
        target_t = len(train)

    quota = _balanced_class_quota(train.y, classes, target_t)
    picks = []
    for c in classes:
        idx = np.flatnonzero(train.y == c)
        if len(idx) == 0:
            continue
        n_discard = int(np.floor(discard_quantile * len(idx)))
        # rank by dual descending, ties by lowest id
        order = idx[np.lexsort((train.ids[idx], -lam[idx]))]
        kept = order[n_discard:]
        picks.append(kept[: quota[c]])
    idx = np.sort(np.concatenate(picks)) if picks else np.empty(0, dtype=np.int64)
    sel = train.take(idx)
    buf.slots[task_index] = Slot(sel.x, sel.y, sel.ids, lam[idx])
    return buf


@dataclass
class ReservoirBuffer:
    """Flat capacity-|B| store; each seen item kept with probability |B|/N."""

    capacity: int
    input_dim: int
    seen: int = 0
    x: np.ndarray = None
    y: np.ndarray = None
    ids: np.ndarray = None
    size: int = 0

    def __post_init__(self):
        if self.x is None:
            self.x = np.zeros((self.capacity, self.input_dim))
            self.y = np.zeros(self.capacity, dtype=np.int64)
            self.ids = np.zeros(self.capacity, dtype=np.int64)

    def insert(self, x_row, label: int, sample_id: int, rng) -> None:
        self.seen += 1
        if self.size < self.capacity:
            i = self.size
            self.size += 1
        elif rng.random() < self.capacity / self.seen:
            i = int(rng.integers(self.capacity))
        else:
            return
        self.x[i] = x_row
        self.y[i] = label
        self.ids[i] = sample_id

    def as_batch(self) -> Batch:
        if self.size == 0:
            raise ValueError("empty buffer")
        return Batch(self.x[: self.size], self.y[: self.size], self.ids[: self.size])


@dataclass
class RingBuffer:
    """Class-wise FIFO store with uniform per-class quotas."""

    capacity: int
    input_dim: int
    per_class: dict[int, list] = field(default_factory=dict)

    def insert(self, x_row, label: int, sample_id: int) -> None:
        queue = self.per_class.setdefault(int(label), [])
        queue.append((np.asarray(x_row, dtype=np.float64), int(sample_id)))
        self._trim()

    def _trim(self) -> None:
        quota = self.quota()
        for queue in self.per_class.values():
            while len(queue) > quota:
                queue.pop(0)

    def quota(self) -> int:
        return max(1, self.capacity // max(1, len(self.per_class)))

    def counts(self) -> dict[int, int]:
        return {c: len(q) for c, q in self.per_class.items()}

    def as_batch(self) -> Batch:
        xs, ys, ids = [], [], []
        for c in sorted(self.per_class):
            for row, sid in self.per_class[c]:
                xs.append(row)
                ys.append(c)
                ids.append(sid)
        if not xs:
            raise ValueError("empty buffer")
        return Batch(np.vstack(xs), np.array(ys, dtype=np.int64), np.array(ids, dtype=np.int64))
