"""Experiment configuration, method dispatch, metrics, and CSV artifacts.

A run executes one method (finetune / er_ring / er_reservoir / pdcl /
pdcl_s) over a task stream for one seed and writes self-describing CSV
artifacts into its output directory:

    accuracy.csv   seed,after_task,eval_task,mode,accuracy
    duals.csv      seed,task,iter,k,lambda,slack
    partition.csv  seed,after_task,k,n_k,lambda_k
    config.json    copy of the resolved configuration
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from pdcl import buffer as buf
from pdcl import pdtrainer as pd
from pdcl import tasks
from pdcl.nncore import Batch, MlpSpec, init_params

METHODS = ("finetune", "er_ring", "er_reservoir", "pdcl", "pdcl_s")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


@dataclass
class StreamConfig:
    type: str = "synthetic"
    n_tasks: int = 5
    classes_per_task: int = 2
    # synthetic
    input_dim: int = 10
    samples_per_task: int = 1250  # total per task; 80% become training rows
    separations: object = 3.0  # scalar or per-task list
    noise: float = 1.0
    label_flip_fraction: float = 0.0
    layout: str = "random"
    # csv
    path: str = ""
    per_class_cap: float = float("inf")

    def build(self, seed: int) -> tasks.TaskStream:
        if self.type == "synthetic":
            seps = np.broadcast_to(np.asarray(self.separations, dtype=float), (self.n_tasks,))
            profile = tasks.DifficultyProfile(
                separations=tuple(seps),
                samples_per_task=(self.samples_per_task,) * self.n_tasks,
                noise=self.noise,
            )
            return tasks.make_synthetic_stream(
                self.n_tasks,
                profile,
                self.input_dim,
                self.classes_per_task,
                seed=seed,
                label_flip_fraction=self.label_flip_fraction,
                layout=self.layout,
            )
        if self.type == "csv":
            return tasks.make_split_stream(
                self.path, self.n_tasks, self.classes_per_task, self.per_class_cap, seed=seed
            )
        raise ValueError(f"unknown stream type: {self.type}")


@dataclass
class ExperimentConfig:
    stream: StreamConfig = field(default_factory=StreamConfig)
    method: str = "pdcl"
    buffer_size: int = 500
    tolerance_factor: float = 1.15
    n_min: int = buf.N_MIN_DEFAULT
    discard_quantile: float = 0.01
    hidden_widths: tuple[int, ...] = (32, 32)
    trainer: pd.TrainerConfig = field(default_factory=pd.TrainerConfig)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    out_dir: str = "out"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.method in ("pdcl", "pdcl_s") and self.buffer_size < (
            self.stream.n_tasks * self.n_min
        ):
            raise ValueError("buffer too small for the per-task slot minimum")

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        stream = StreamConfig(**raw.pop("stream", {}))
        trainer = pd.TrainerConfig(**raw.pop("trainer", {}))
        cfg = ExperimentConfig(stream=stream, trainer=trainer, **raw)
        cfg.hidden_widths = tuple(cfg.hidden_widths)
        cfg.seeds = tuple(cfg.seeds)
        return cfg

    @staticmethod
    def from_json(path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return ExperimentConfig.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        d["seeds"] = list(self.seeds)
        return d


@dataclass
class RunResult:
    seed: int
    # accuracy[mode][t] = per-task accuracy vector after training task t
    accuracy: dict[str, list[np.ndarray]]
    partitions: list[np.ndarray]
    lambdas: list[np.ndarray]
    sample_duals: list[dict[int, float]]
    flipped_ids: list[tuple[int, ...]]
    buffer: buf.ReplayBuffer | None = None


def final_metrics(matrix: list[np.ndarray]):
    """(final average accuracy, average forgetting) from a run's accuracy
    rows, where ``matrix[t][k]`` is accuracy on task k after training t."""
    final = matrix[-1]
    final_avg = float(np.mean(final))
    n_tasks = len(matrix)
    if n_tasks == 1:
        return final_avg, 0.0
    drops = []
    for k in range(n_tasks - 1):
        best = max(matrix[t][k] for t in range(k, n_tasks - 1))
        drops.append(best - final[k])
    return final_avg, float(np.mean(drops))


def run_experiment(config: ExperimentConfig, seed: int, out_dir=None) -> RunResult:
    stream = config.stream.build(seed)
    spec = MlpSpec(
        layer_widths=(stream.input_dim, *config.hidden_widths, stream.n_classes),
        seed=seed,
    )
    theta = init_params(spec)
    rng = np.random.default_rng(seed + 1)
    cfg = config.trainer

    replay_buf = buf.ReplayBuffer(capacity=config.buffer_size, input_dim=stream.input_dim)
    reservoir = buf.ReservoirBuffer(capacity=config.buffer_size, input_dim=stream.input_dim)
    ring = buf.RingBuffer(capacity=config.buffer_size, input_dim=stream.input_dim)

    tolerances: list[float] = []  # recorded unconstrained minima m_k
    accuracy = {"CIL": [], "TIL": []}
    partitions: list[np.ndarray] = []
    lambdas: list[np.ndarray] = []
    all_sample_duals: list[dict[int, float]] = []
    dual_rows: list[list] = []

    def trace(rec: pd.IterationRecord):
        for k in range(len(rec.lam)):
            dual_rows.append(
                [seed, rec.task, rec.iteration, k, _fmt(rec.lam[k]), _fmt(rec.slacks[k])]
            )

    for t, task in enumerate(stream.tasks):
        train = task.train
        if config.method == "finetune":
            theta, _ = pd.train_unconstrained(spec, theta, train, cfg.steps_per_task, cfg, rng)
        elif config.method in ("er_ring", "er_reservoir"):
            store = ring if config.method == "er_ring" else reservoir
            replay = None
            if t > 0:
                replay = store.as_batch()
            theta, _ = pd.train_unconstrained(
                spec, theta, train, cfg.steps_per_task, cfg, rng, replay=replay
            )
            order = rng.permutation(len(train))
            if config.method == "er_ring":
                for i in order:
                    ring.insert(train.x[i], int(train.y[i]), int(train.ids[i]))
            else:
                for i in order:
                    reservoir.insert(train.x[i], int(train.y[i]), int(train.ids[i]), rng)
        else:  # pdcl / pdcl_s
            # unconstrained pre-pass records the task's achievable loss m_t
            _, m_t = pd.train_unconstrained(spec, theta, train, cfg.steps_per_task, cfg, rng)
            tolerances.append(m_t)
            tol = pd.set_tolerances(tolerances, config.tolerance_factor)
            past = [replay_buf.task_batch(k) for k in range(t)]
            result = pd.train_task(
                spec,
                theta,
                train,
                past,
                tol.eps,
                cfg,
                rng,
                sample_level=(config.method == "pdcl_s"),
                on_iteration=trace,
            )
            theta = result.theta
            lambdas.append(result.lam)
            all_sample_duals.append(result.sample_duals)

            partition = buf.solve_partition(
                buf.effective_weights(result.lam), config.buffer_size, config.n_min
            )
            partitions.append(partition.n)
            if config.method == "pdcl_s":
                replay_buf = buf.fill_buffer_dual(
                    replay_buf,
                    t,
                    train,
                    task.classes,
                    partition,
                    result.sample_duals,
                    config.discard_quantile,
                    rng=rng,
                )
            else:
                replay_buf = buf.fill_buffer_random(
                    replay_buf, t, train, task.classes, partition, rng
                )

        for mode in ("CIL", "TIL"):
            accuracy[mode].append(tasks.evaluate(spec, theta, stream, t + 1, mode))

    result = RunResult(
        seed=seed,
        accuracy=accuracy,
        partitions=partitions,
        lambdas=lambdas,
        sample_duals=all_sample_duals,
        flipped_ids=[task.flipped_ids for task in stream.tasks],
        buffer=replay_buf if config.method in ("pdcl", "pdcl_s") else None,
    )
    if out_dir is not None:
        _write_artifacts(config, result, dual_rows, out_dir)
    return result


def _write_artifacts(config: ExperimentConfig, result: RunResult, dual_rows, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "accuracy.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "after_task", "eval_task", "mode", "accuracy"])
        for mode in ("CIL", "TIL"):
            for t, accs in enumerate(result.accuracy[mode]):
                for k, acc in enumerate(accs):
                    writer.writerow([result.seed, t, k, mode, _fmt(acc)])
    with open(out / "duals.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "task", "iter", "k", "lambda", "slack"])
        writer.writerows(dual_rows)
    with open(out / "partition.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "after_task", "k", "n_k", "lambda_k"])
        for t, (n, lam) in enumerate(zip(result.partitions, result.lambdas)):
            for k in range(len(n)):
                writer.writerow([result.seed, t, k, int(n[k]), _fmt(lam[k])])
    if result.buffer is not None:
        result.buffer.to_csv(out / "buffer.csv")
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_all_seeds(config: ExperimentConfig, out_root=None) -> list[RunResult]:
    results = []
    for seed in config.seeds:
        out_dir = None if out_root is None else Path(out_root) / f"seed_{seed}"
        results.append(run_experiment(config, seed, out_dir))
    return results


def tolerance_ablation(config: ExperimentConfig, factors, out_root=None):
    """One run per (factor, seed); returns rows
    ``(factor, seed, mode, final_accuracy, final_error)``."""
    rows = []
    for factor in factors:
        if not 1.0 < factor <= 2.0:
            raise ValueError("ablation factors must lie in (1, 2]")
        cfg = ExperimentConfig.from_dict({**config.to_dict(), "tolerance_factor": factor})
        for seed in cfg.seeds:
            out_dir = None
            if out_root is not None:
                out_dir = Path(out_root) / f"factor_{factor:g}" / f"seed_{seed}"
            result = run_experiment(cfg, seed, out_dir)
            for mode in ("CIL", "TIL"):
                final_avg, _ = final_metrics(result.accuracy[mode])
                rows.append((float(factor), seed, mode, final_avg, 1.0 - final_avg))
    if out_root is not None:
        path = Path(out_root) / "ablation.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["factor", "seed", "mode", "final_accuracy", "final_error"])
            for factor, seed, mode, acc, err in rows:
                writer.writerow([_fmt(factor), seed, mode, _fmt(acc), _fmt(err)])
    return rows
