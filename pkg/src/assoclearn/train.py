"""Sequential and pipelined training loops.

With n mini-batches and C components, a sequential epoch executes n*C
component tasks one after another. The pipelined epoch runs one worker
thread per component, connected by bounded FIFO queues: component c
handles batch m at logical unit u = m + c - 1, so the whole epoch spans
n + C - 1 units. Every worker runs its forward pass before its own
parameter update and forwards those pre-update activations, which is
exactly what the sequential loop hands the next component; the parameter
trajectory is therefore identical in both modes for any pipeline depth,
and a queue only changes how much wall-clock overlap the stages get.

``run_pipeline`` is the schedule-agnostic core (stages, bounded queues,
an optional in-flight cap, monotone batch-id enforcement, error
propagation); the trainers and the synthetic throughput bench both run
on it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from queue import Queue
from threading import Semaphore, Thread

import numpy as np

from .errors import ConfigError, NumericError, TrainingError
from .linalg import Matrix, Rng
from .al_core import ALNetwork, component_update
from .bp import BPNetwork, bp_train_epoch
from .data import BatchIterator, Dataset, one_hot
from .metrics import MetricsRecord, evaluate_al, evaluate_bp
from . import checkpoint as ckpt

_STOP = object()

MODES = ("al-seq", "al-pipe", "bp")


@dataclass
class BatchMessage:
    """Detached activations in flight between two components."""

    batch_id: int
    epoch: int
    s: Matrix
    t: Matrix

    def __post_init__(self):
        if self.s.shape[0] != self.t.shape[0]:
            raise TrainingError(
                f"batch {self.batch_id}: s has {self.s.shape[0]} rows, "
                f"t has {self.t.shape[0]}")


@dataclass
class Schedule:
    """The staggered batch/component timetable."""

    n_batches: int
    n_components: int

    def batch_at(self, unit: int, component: int) -> int | None:
        m = unit - component + 1
        return m if 1 <= m <= self.n_batches else None

    def unit_for(self, batch: int, component: int) -> int:
        return batch + component - 1

    def total_units(self) -> int:
        return self.n_batches + self.n_components - 1

    def sequential_tasks(self) -> int:
        return self.n_batches * self.n_components

    def trace(self) -> list[list[tuple[int, int]]]:
        """Per unit, the active (component, batch) pairs."""
        out = []
        for u in range(1, self.total_units() + 1):
            active = []
            for c in range(1, self.n_components + 1):
                m = self.batch_at(u, c)
                if m is not None:
                    active.append((c, m))
            out.append(active)
        return out


@dataclass
class ThroughputReport:
    wall_clock: float
    time_units: int
    busy_fraction: list[float]
    speedup: float | None = None


@dataclass
class PipelineRun:
    results: list
    busy: list[float]
    lifetime: list[float]
    wall_clock: float


def run_pipeline(stages, feed, capacity: int = 2,
                 depth: int | None = None) -> PipelineRun:
    """Push (batch_id, payload) pairs through worker threads.

    stages: one callable per stage, payload -> payload. feed: iterable of
    (batch_id, payload) with strictly increasing ids. capacity bounds
    each inter-stage queue; depth, when given, caps how many batches are
    in flight anywhere (depth=1 degenerates to fully serial execution).
    A failing stage drains its input so neighbors never deadlock, and the
    first failure is re-raised as TrainingError after all workers exit.
    """
    if not stages:
        raise ConfigError("need at least one stage")
    if capacity < 1:
        raise ConfigError(f"queue capacity must be >= 1, got {capacity}")
    if depth is not None and depth < 1:
        raise ConfigError(f"pipeline depth must be >= 1, got {depth}")
    n = len(stages)
    queues = [Queue(maxsize=capacity) for _ in range(n)]
    results: list = []
    errors: list = []
    busy = [0.0] * n
    lifetime = [0.0] * n
    sem = Semaphore(depth) if depth is not None else None

    def worker(i: int) -> None:
        q_in = queues[i]
        q_out = queues[i + 1] if i + 1 < n else None
        is_last = q_out is None
        last_id = None
        t_start = time.perf_counter()
        try:
            while True:
                item = q_in.get()
                if item is _STOP:
                    if q_out is not None:
                        q_out.put(_STOP)
                    break
                bid, payload = item
                if last_id is not None and bid <= last_id:
                    raise TrainingError(
                        f"stage {i + 1}: batch {bid} arrived after {last_id}")
                last_id = bid
                t0 = time.perf_counter()
                out = stages[i](payload)
                busy[i] += time.perf_counter() - t0
                if is_last:
                    results.append((bid, out))
                    if sem is not None:
                        sem.release()
                else:
                    q_out.put((bid, out))
        except BaseException as e:
            errors.append((i, e))
            # Keep neighbors moving: swallow the rest of the input and
            # hand the in-flight tokens back so the feeder can stop.
            while True:
                item = q_in.get()
                if item is _STOP:
                    break
                if sem is not None:
                    sem.release()
            if q_out is not None:
                q_out.put(_STOP)
        finally:
            lifetime[i] = time.perf_counter() - t_start

    threads = [Thread(target=worker, args=(i,), daemon=True)
               for i in range(n)]
    t_wall = time.perf_counter()
    for t in threads:
        t.start()
    try:
        for bid, payload in feed:
            if errors:
                break
            if sem is not None:
                acquired = False
                while not errors:
                    if sem.acquire(timeout=0.05):
                        acquired = True
                        break
                if not acquired:
                    break
            queues[0].put((bid, payload))
    finally:
        queues[0].put(_STOP)
    for t in threads:
        t.join()
    wall = time.perf_counter() - t_wall
    if errors:
        i, e = errors[0]
        raise TrainingError(f"pipeline stage {i + 1} failed: {e}") from e
    return PipelineRun(results=results, busy=busy, lifetime=lifetime,
                       wall_clock=wall)


def train_epoch_sequential(net: ALNetwork, X: Matrix, y_onehot: Matrix,
                           batch_size: int, rng: Rng, epoch: int = 0,
                           trace: list | None = None) -> MetricsRecord:
    """One shuffled pass, batch by batch, component 1 through C.

    Each component trains and then hands its pre-update forward outputs
    to the next one. When a list is passed as trace, one
    (task_index, component, batch_id) triple is appended per task.
    """
    n = X.shape[0]
    C = net.n_components
    sums1 = np.zeros(C)
    sums2 = np.zeros(C)
    task = 0
    for m, idx in enumerate(BatchIterator(n, batch_size, rng), start=1):
        s, t = X[idx], y_onehot[idx]
        rows = len(idx)
        for k, c in enumerate(net.components):
            try:
                s, t, rec = component_update(c, s, t)
            except NumericError as e:
                raise NumericError(f"epoch {epoch}, batch {m}: {e}") from e
            task += 1
            if trace is not None:
                trace.append((task, c.index, m))
            sums1[k] += rec.mse1 * rows
            sums2[k] += rec.mse2 * rows
    return MetricsRecord(
        epoch=epoch, mode="al-seq",
        mse1=[float(v) for v in sums1 / n],
        mse2=[float(v) for v in sums2 / n],
        train_loss=float((sums1 + sums2).sum() / n))


def train_epoch_pipelined(net: ALNetwork, X: Matrix, y_onehot: Matrix,
                          batch_size: int, rng: Rng, epoch: int = 0,
                          capacity: int = 2, depth: int | None = None):
    """One epoch with one worker per component; see the module docstring
    for the equivalence to the sequential loop. Returns
    (MetricsRecord, ThroughputReport); the report's speedup is left None
    (the bench harness fills it by also timing a sequential run)."""
    n = X.shape[0]
    C = net.n_components
    n_batches = (n + batch_size - 1) // batch_size
    sums1 = np.zeros(C)
    sums2 = np.zeros(C)

    def make_stage(k: int, comp):
        def stage(msg: BatchMessage) -> BatchMessage:
            try:
                s, t, rec = component_update(comp, msg.s, msg.t)
            except NumericError as e:
                raise NumericError(
                    f"epoch {msg.epoch}, batch {msg.batch_id}: {e}") from e
            rows = msg.s.shape[0]
            sums1[k] += rec.mse1 * rows
            sums2[k] += rec.mse2 * rows
            return BatchMessage(msg.batch_id, msg.epoch, s, t)
        return stage

    stages = [make_stage(k, c) for k, c in enumerate(net.components)]

    def feed():
        for m, idx in enumerate(BatchIterator(n, batch_size, rng), start=1):
            yield m, BatchMessage(m, epoch, X[idx], y_onehot[idx])

    run = run_pipeline(stages, feed(), capacity=capacity, depth=depth)
    if len(run.results) != n_batches:
        raise TrainingError(
            f"epoch ended with {len(run.results)} of {n_batches} batches")
    rec = MetricsRecord(
        epoch=epoch, mode="al-pipe",
        mse1=[float(v) for v in sums1 / n],
        mse2=[float(v) for v in sums2 / n],
        train_loss=float((sums1 + sums2).sum() / n))
    report = ThroughputReport(
        wall_clock=run.wall_clock,
        time_units=Schedule(n_batches, C).total_units(),
        busy_fraction=[b / max(lf, 1e-12)
                       for b, lf in zip(run.busy, run.lifetime)])
    return rec, report


def lr_at_epoch(base_lr: float, drops, factor: float, epoch: int) -> float:
    """Step schedule: the rate is multiplied by factor after each listed
    epoch has completed (1-based epochs)."""
    return base_lr * factor ** sum(1 for d in drops if epoch > d)


@dataclass
class FitResult:
    records: list[MetricsRecord]
    best_test_accuracy: float | None
    best_epoch: int | None
    checkpoint_path: str | None
    wall_clock: float
    reports: list[ThroughputReport] = field(default_factory=list)

    @property
    def final(self) -> MetricsRecord:
        return self.records[-1]


def fit(model, train_ds: Dataset, test_ds: Dataset, *, mode: str,
        epochs: int, batch_size: int, rng: Rng, seed: int,
        lr: float = 1e-4, lr_drops=(80, 120, 160, 180),
        lr_factor: float = 0.5, out_dir=None, capacity: int = 2,
        eval_chunk: int = 2048) -> FitResult:
    """Full training run: per-epoch metrics, step learning-rate schedule,
    test evaluation every epoch, best checkpoint persisted to out_dir.

    epochs=0 evaluates the untouched model once and writes nothing.
    """
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    is_al = mode.startswith("al")
    if is_al and not isinstance(model, ALNetwork):
        raise ConfigError(f"mode {mode} needs a component network")
    if not is_al and not isinstance(model, BPNetwork):
        raise ConfigError("mode bp needs a BPNetwork")
    evaluate = evaluate_al if is_al else evaluate_bp

    y1 = one_hot(train_ds.y, model.target_dim if is_al else model.n_classes)
    ckpt_path = Path(out_dir) / "checkpoint.bin" if out_dir else None
    t_total = time.perf_counter()
    records: list[MetricsRecord] = []
    reports: list[ThroughputReport] = []

    if epochs == 0:
        rec = MetricsRecord(
            epoch=0, mode=mode, mse1=[], mse2=[],
            train_accuracy=evaluate(model, train_ds, eval_chunk),
            test_accuracy=evaluate(model, test_ds, eval_chunk))
        return FitResult([rec], None, None, None,
                         time.perf_counter() - t_total)

    best_acc = -1.0
    best_epoch = None
    for e in range(1, epochs + 1):
        model.set_lr(lr_at_epoch(lr, lr_drops, lr_factor, e))
        t_epoch = time.perf_counter()
        if mode == "al-seq":
            rec = train_epoch_sequential(model, train_ds.X, y1, batch_size,
                                         rng, epoch=e)
        elif mode == "al-pipe":
            rec, report = train_epoch_pipelined(model, train_ds.X, y1,
                                                batch_size, rng, epoch=e,
                                                capacity=capacity)
            reports.append(report)
        else:
            loss, train_acc = bp_train_epoch(model, train_ds.X, y1,
                                             batch_size, rng, epoch=e)
            rec = MetricsRecord(epoch=e, mode="bp", mse1=[], mse2=[],
                                train_loss=loss, train_accuracy=train_acc)
        if is_al:
            rec.train_accuracy = evaluate(model, train_ds, eval_chunk)
        rec.test_accuracy = evaluate(model, test_ds, eval_chunk)
        rec.wall_clock = time.perf_counter() - t_epoch
        records.append(rec)
        if rec.test_accuracy > best_acc:
            best_acc = rec.test_accuracy
            best_epoch = e
            if ckpt_path is not None:
                extra = {"test_accuracy": best_acc}
                if is_al:
                    ckpt.save_al(ckpt_path, model, seed, e, extra)
                else:
                    ckpt.save_bp(ckpt_path, model, seed, e, extra)
    return FitResult(records, best_acc, best_epoch,
                     str(ckpt_path) if ckpt_path else None,
                     time.perf_counter() - t_total, reports)


@dataclass
class BenchResult:
    schedule: Schedule
    sequential_wall: float
    report: ThroughputReport


def bench_pipeline(n_batches: int, components: int, task_cost_ms: float,
                   capacity: int = 2) -> BenchResult:
    """Synthetic equal-cost workload: every task sleeps task_cost_ms, so
    the measured speedup isolates the scheduling machinery."""
    if components < 1:
        raise ConfigError(f"components must be >= 1, got {components}")
    if n_batches < 1:
        raise ConfigError(f"n_batches must be >= 1, got {n_batches}")
    cost = task_cost_ms / 1000.0
    sched = Schedule(n_batches, components)

    t0 = time.perf_counter()
    for _ in range(sched.sequential_tasks()):
        time.sleep(cost)
    seq_wall = time.perf_counter() - t0

    def stage(payload):
        time.sleep(cost)
        return payload

    run = run_pipeline([stage] * components,
                       ((m, m) for m in range(1, n_batches + 1)),
                       capacity=capacity)
    report = ThroughputReport(
        wall_clock=run.wall_clock,
        time_units=sched.total_units(),
        busy_fraction=[b / max(lf, 1e-12)
                       for b, lf in zip(run.busy, run.lifetime)],
        speedup=seq_wall / run.wall_clock)
    return BenchResult(schedule=sched, sequential_wall=seq_wall,
                       report=report)
