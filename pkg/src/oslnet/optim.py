"""RMSprop/SGD updates, cyclic cosine annealing and snapshot ensembles."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError


class ScheduleExhausted(RuntimeError):
    pass


class SnapshotProtocolError(RuntimeError):
    pass


class SnapshotStateError(RuntimeError):
    pass


class RMSprop:
    """``acc <- rho*acc + (1-rho)*g^2``; ``p <- p - lr*g/(sqrt(acc)+eps)``.

    Parameters are updated in place. Accumulators are created lazily, keyed by
    the caller-supplied parameter name.
    """

    def __init__(self, lr: float = 1e-3, smoothing: float = 0.99, eps: float = 1e-8):
        self.lr = lr
        self.smoothing = smoothing
        self.eps = eps
        self.acc: dict[str, np.ndarray] = {}
        self.step_count = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float | None = None):
        lr = self.lr if lr is None else lr
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient {g.shape} does not match parameter {name} {p.shape}")
            acc = self.acc.get(name)
            if acc is None:
                acc = self.acc[name] = np.zeros_like(p)
            acc *= self.smoothing
            acc += (1.0 - self.smoothing) * g * g
            p -= lr * g / (np.sqrt(acc) + self.eps)
        self.step_count += 1
        return params


class SGD:
    def __init__(self, lr: float = 0.01):
        self.lr = lr
        self.step_count = 0

    def step(self, params, grads, lr: float | None = None):
        lr = self.lr if lr is None else lr
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient {g.shape} does not match parameter {name} {p.shape}")
            p -= lr * g
        self.step_count += 1
        return params


def rmsprop_step(state: RMSprop, params, grads):
    return state.step(params, grads)


def make_optimizer(name: str, lr: float, smoothing: float = 0.99, eps: float = 1e-8):
    if name == "rmsprop":
        return RMSprop(lr, smoothing, eps)
    if name == "sgd":
        return SGD(lr)
    raise ValueError(f"unknown optimizer {name!r}")


@dataclass(frozen=True)
class CosineSchedule:
    eta0: float
    cycle_length: int
    cycles: int

    def __post_init__(self):
        if self.cycle_length < 1 or self.cycles < 1:
            raise ValueError("cycle_length and cycles must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.cycle_length * self.cycles

    def rate(self, global_step: int) -> float:
        if global_step < 0:
            raise ValueError("global_step must be >= 0")
        if global_step >= self.total_steps:
            raise ScheduleExhausted(f"step {global_step} beyond {self.cycles} cycles of {self.cycle_length}")
        t = global_step % self.cycle_length
        return 0.5 * self.eta0 * (1.0 + math.cos(math.pi * t / self.cycle_length))

    def is_cycle_end(self, completed_steps: int) -> bool:
        """True when ``completed_steps`` steps finish a cycle."""
        return completed_steps > 0 and completed_steps % self.cycle_length == 0


def cosine_rate(schedule: CosineSchedule, global_step: int) -> float:
    return schedule.rate(global_step)


@dataclass
class SnapshotSet:
    members: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.members)


def capture_snapshot(snapshots: SnapshotSet, model, schedule: CosineSchedule | None = None,
                     completed_steps: int | None = None) -> SnapshotSet:
    """Append a deep copy of ``model`` to ``snapshots``.

    When ``schedule`` and ``completed_steps`` are given the capture must fall
    exactly on a cycle boundary.
    """
    if schedule is not None and completed_steps is not None and not schedule.is_cycle_end(completed_steps):
        raise SnapshotProtocolError(
            f"snapshot requested after {completed_steps} steps, not at a cycle boundary "
            f"(cycle length {schedule.cycle_length})"
        )
    snapshots.members.append(copy.deepcopy(model))
    return snapshots


def ensemble_predict(snapshots: SnapshotSet, inputs) -> np.ndarray:
    """Arithmetic mean of the members' class-probability outputs."""
    if not snapshots.members:
        raise SnapshotStateError("cannot predict with an empty snapshot set")
    total = None
    for member in snapshots.members:
        p = member.predict_proba(inputs)
        total = p if total is None else total + p
    return total / len(snapshots.members)
