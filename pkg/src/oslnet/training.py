"""Model assembly, the minibatch training loop, evaluation and seeded rounds."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, is_dataclass

import numpy as np

from . import losses as L
from .analysis import DegenerateWeightsError, angle_matrix
from .data import TEST, TRAIN, DataRecipe, Dataset
from .layers import ConfigError, DenseLayer, DropConnectLayer, DropoutLayer, OslLayer
from .linalg import as_matrix, softmax
from .optim import CosineSchedule, SnapshotSet, capture_snapshot, ensemble_predict, make_optimizer

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e6


class DivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class OrthogonalityError(AssertionError):
    pass


class RoundsError(RuntimeError):
    """Some rounds failed; ``results`` holds the successful ones in round order."""

    def __init__(self, results, failures):
        detail = "; ".join(f"round {i}: {e}" for i, e in failures)
        super().__init__(f"{len(failures)} round(s) failed: {detail}")
        self.results = results
        self.failures = failures


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    n_classes: int
    hidden_widths: tuple[int, ...] = (32,)
    classifier: str = "fc"
    hidden_dropout: float | None = None
    hidden_dropconnect: float | None = None
    loss: L.LossKind = field(default_factory=L.LossKind)
    classifier_bias: bool = False
    hidden_bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", L.LossKind(**self.loss))
        if not self.hidden_widths:
            raise ConfigError("hidden_widths must be non-empty")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigError("hidden widths must be positive")
        if self.classifier not in ("fc", "osl"):
            raise ConfigError(f"classifier must be 'fc' or 'osl', got {self.classifier!r}")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.classifier == "osl":
            if self.hidden_widths[-1] < self.n_classes:
                raise ConfigError(
                    f"each class needs at least one hidden neuron: last hidden width "
                    f"{self.hidden_widths[-1]} < {self.n_classes} classes"
                )
            if self.loss.name == "large_margin":
                raise ConfigError("large_margin loss requires an unmasked dense classifier (classifier='fc')")
            if self.classifier_bias:
                raise ConfigError("the orthogonal softmax layer has no bias")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    optimizer: str = "rmsprop"
    lr: float = 1e-3
    smoothing: float = 0.99
    eps: float = 1e-8
    seed: int = 0
    snapshot_count: int | None = None
    schedule_granularity: str = "epoch"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.optimizer not in ("rmsprop", "sgd"):
            raise ConfigError(f"optimizer must be 'rmsprop' or 'sgd', got {self.optimizer!r}")
        if self.schedule_granularity not in ("epoch", "iteration"):
            raise ConfigError("schedule_granularity must be 'epoch' or 'iteration'")
        if self.snapshot_count is not None:
            if self.snapshot_count < 1:
                raise ConfigError("snapshot_count must be >= 1")
            if self.epochs % self.snapshot_count:
                raise ConfigError(f"epochs ({self.epochs}) must be divisible by snapshot_count ({self.snapshot_count})")


@dataclass
class RunResult:
    seed: int
    train_acc: float
    test_acc: float
    train_loss: float
    loss_curve: list[float]
    acc_curve: list[float]
    config_hash: str
    wall_time: float = 0.0
    angles: list | None = None

    def record(self, **extra) -> dict:
        """JSON-ready dict without the wall time."""
        out = dict(extra)
        out.update(seed=self.seed, train_acc=self.train_acc, test_acc=self.test_acc,
                   train_loss=self.train_loss, loss_curve=self.loss_curve,
                   acc_curve=self.acc_curve, config_hash=self.config_hash)
        return out


def _jsonable(obj):
    if is_dataclass(obj):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def config_hash(*parts) -> str:
    blob = json.dumps([_jsonable(p) for p in parts], sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


class Model:
    """Stack of ReLU hidden layers followed by a dense or orthogonal classifier."""

    def __init__(self, hidden: list, classifier, spec: ModelSpec | None = None):
        self.hidden = hidden
        self.classifier = classifier
        self.spec = spec

    @classmethod
    def build(cls, spec: ModelSpec, rng: np.random.Generator, dropout_rng=None) -> "Model":
        dropout_rng = dropout_rng if dropout_rng is not None else rng
        hidden = []
        d_in = spec.input_dim
        for width in spec.hidden_widths:
            dense = DenseLayer.create(rng, d_in, width, bias=spec.hidden_bias, activation="relu")
            if spec.hidden_dropconnect:
                dense = DropConnectLayer.wrap(dense, spec.hidden_dropconnect, dropout_rng)
            hidden.append(dense)
            if spec.hidden_dropout:
                hidden.append(DropoutLayer(spec.hidden_dropout, dropout_rng))
            d_in = width
        if spec.classifier == "osl":
            clf = OslLayer.create(rng, d_in, spec.n_classes)
        else:
            clf = DenseLayer.create(rng, d_in, spec.n_classes, bias=spec.classifier_bias)
        return cls(hidden, clf, spec)

    def layers(self):
        return [*self.hidden, self.classifier]

    def train(self, mode: bool = True) -> None:
        for layer in self.layers():
            layer.train(mode)

    def eval(self) -> None:
        self.train(False)

    def features(self, x) -> np.ndarray:
        h = as_matrix(x)
        for layer in self.hidden:
            h = layer.forward(h)
        return h

    def logits(self, x) -> np.ndarray:
        return self.classifier.pre_activation(self.features(x))

    def predict_proba(self, x) -> np.ndarray:
        mode = self.classifier.training
        self.eval()
        try:
            return softmax(self.logits(x))
        finally:
            self.train(mode)

    def backward_hidden(self, grad_h: np.ndarray) -> None:
        g = grad_h
        for layer in reversed(self.hidden):
            g = layer.backward(g)

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers()):
            for name, p in layer.params.items():
                out[f"{i}.{name}"] = p
        return out

    def named_grads(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers()):
            for name, g in layer.grads.items():
                out[f"{i}.{name}"] = g
        return out


class SnapshotEnsemble:
    def __init__(self, snapshots: SnapshotSet):
        self.snapshots = snapshots

    def predict_proba(self, x) -> np.ndarray:
        return ensemble_predict(self.snapshots, x)


def check_orthogonal(model: Model) -> None:
    clf = model.classifier
    if not isinstance(clf, OslLayer):
        return
    gram = clf.effective_weights().T @ clf.effective_weights()
    off = gram[~np.eye(gram.shape[0], dtype=bool)]
    if np.any(off != 0.0):
        raise OrthogonalityError("orthogonal classifier columns acquired a nonzero dot product")
    if np.any(clf.params["W"][clf.mask.matrix == 0] != 0.0):
        raise OrthogonalityError("nonzero value written to a masked classifier weight")


def _loss_and_grad(kind: L.LossKind, probs, labels):
    if kind.name == "focal":
        return L.focal(probs, labels, kind.gamma)
    if kind.name == "truncated_lq":
        return L.truncated_lq(probs, labels, kind.q, kind.k_thresh)
    return L.cross_entropy(probs, labels)


def _train_step(model: Model, kind: L.LossKind, xb, yb, centers, lam_anneal) -> float:
    h = model.features(xb)
    clf = model.classifier
    if kind.name == "large_margin":
        w = clf.params["W"]
        z = L.large_margin_logits(w, h, yb, kind.m, lam_anneal)
        if clf.has_bias:
            z = z + clf.params["b"]
        loss, gz = L.cross_entropy(softmax(z), yb)
        gw, gh = L.large_margin_backward(w, h, yb, gz, kind.m, lam_anneal)
        clf.grads = {"W": gw}
        if clf.has_bias:
            clf.grads["b"] = gz.sum(axis=1, keepdims=True)
    else:
        z = clf.logits(h) if isinstance(clf, OslLayer) else clf.forward(h)
        loss, gz = _loss_and_grad(kind, softmax(z), yb)
        gh = clf.backward(gz)
    if kind.name == "center":
        c_loss, c_grad, update = L.center_loss(h, yb, centers, kind.lam)
        loss += c_loss
        gh = gh + c_grad
        centers.update(update)
    model.backward_hidden(gh)
    return loss


def _classifier_angles(model: Model):
    try:
        return angle_matrix(model.classifier.effective_weights()).tolist()
    except DegenerateWeightsError:
        return None


def _accuracy(predictor, x, y) -> float:
    p = predictor.predict_proba(x)
    return float(np.mean(np.argmax(p, axis=0) == y))


def evaluate(model, data: Dataset, split: str = TEST) -> float:
    """Fraction of argmax-correct predictions on one split."""
    if split not in (TRAIN, TEST):
        raise ValueError(f"split must be {TRAIN!r} or {TEST!r}")
    x, y = data.subset(split)
    if y.size == 0:
        raise ValueError(f"the {split} split is empty")
    return _accuracy(model, x, y)


def _cross_entropy_of(predictor, x, y) -> float:
    p = predictor.predict_proba(x)
    return L.cross_entropy(p, y)[0]


@dataclass
class TrainOutput:
    result: RunResult
    model: Model
    snapshots: SnapshotSet | None
    predictor: object


def train(spec: ModelSpec, config: TrainConfig, data: Dataset, *, return_model: bool = False,
          check_orthogonality: bool = True):
    """Train one model; deterministic in ``(spec, config, data)``.

    Returns a :class:`RunResult`, or a :class:`TrainOutput` carrying the
    final model and snapshot set when ``return_model`` is set.
    """
    start = time.perf_counter()
    if data.dim != spec.input_dim:
        raise ConfigError(f"data has {data.dim} features but the model expects {spec.input_dim}")
    if data.class_count > spec.n_classes:
        raise ConfigError(f"data has {data.class_count} classes but the model has {spec.n_classes}")
    x_train, y_train = data.train
    x_test, y_test = data.test
    if y_train.size == 0:
        raise ValueError("training split is empty")

    init_ss, shuffle_ss, noise_ss = np.random.SeedSequence(config.seed).spawn(3)
    model = Model.build(spec, np.random.default_rng(init_ss), np.random.default_rng(noise_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    opt = make_optimizer(config.optimizer, config.lr, config.smoothing, config.eps)
    kind = spec.loss
    centers = L.ClassCenters.zeros(spec.hidden_widths[-1], spec.n_classes, kind.alpha_center)

    n = y_train.size
    steps_per_epoch = -(-n // config.batch_size)
    schedule = None
    snapshots = SnapshotSet() if config.snapshot_count else None
    per_iter = config.schedule_granularity == "iteration"
    if config.snapshot_count:
        cycle_epochs = config.epochs // config.snapshot_count
        schedule = CosineSchedule(config.lr, cycle_epochs * (steps_per_epoch if per_iter else 1),
                                  config.snapshot_count)

    chash = config_hash(spec, config)
    loss_curve, acc_curve = [], []
    step = 0
    for epoch in range(config.epochs):
        model.train()
        lam_anneal = kind.anneal(epoch)
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            loss = _train_step(model, kind, x_train[:, idx], y_train[idx], centers, lam_anneal)
            if not np.isfinite(loss) or loss > DIVERGENCE_THRESHOLD:
                raise DivergedError(epoch, loss)
            lr = None if schedule is None else schedule.rate(step if per_iter else epoch)
            opt.step(model.named_params(), model.named_grads(), lr)
            step += 1
            total += loss * idx.size
        loss_curve.append(total / n)
        model.eval()
        acc_curve.append(_accuracy(model, x_train, y_train))
        if check_orthogonality:
            check_orthogonal(model)
        if snapshots is not None:
            done = step if per_iter else epoch + 1
            if schedule.is_cycle_end(done):
                capture_snapshot(snapshots, model, schedule, done)

    model.eval()
    predictor = SnapshotEnsemble(snapshots) if snapshots else model
    result = RunResult(
        seed=config.seed,
        train_acc=_accuracy(predictor, x_train, y_train),
        test_acc=_accuracy(predictor, x_test, y_test) if y_test.size else float("nan"),
        train_loss=_cross_entropy_of(model, x_train, y_train),
        loss_curve=loss_curve,
        acc_curve=acc_curve,
        config_hash=chash,
        wall_time=time.perf_counter() - start,
        angles=_classifier_angles(model),
    )
    if return_model:
        return TrainOutput(result, model, snapshots, predictor)
    return result


def _one_round(args):
    spec, config, recipe, i = args
    data = recipe.build(i) if isinstance(recipe, DataRecipe) else recipe(i)
    cfg = TrainConfig(**{**asdict(config), "seed": config.seed + i})
    return train(spec, cfg, data)


def run_rounds(spec: ModelSpec, config: TrainConfig, data_recipe, rounds: int, workers: int = 1):
    """Run ``rounds`` seeded repetitions; round ``i`` trains with seed ``config.seed + i``.

    ``data_recipe`` is a :class:`DataRecipe` or a callable ``round_index -> Dataset``.
    Results come back in round order. Failed rounds do not stop the others;
    they are reported together in a :class:`RoundsError` at the end.
    """
    if rounds < 2:
        raise ValueError("rounds must be >= 2")
    jobs = [(spec, config, data_recipe, i) for i in range(rounds)]
    results, failures = [], []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_one_round, job) for job in jobs]
            for i, fut in enumerate(futures):
                try:
                    results.append(fut.result())
                except Exception as exc:  # noqa: BLE001 - reported per round
                    failures.append((i, exc))
    else:
        for job in jobs:
            try:
                results.append(_one_round(job))
            except Exception as exc:  # noqa: BLE001 - reported per round
                logger.warning("round %d failed: %s", job[-1], exc)
                failures.append((job[-1], exc))
    if failures:
        raise RoundsError(results, failures)
    return results
