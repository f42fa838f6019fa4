# src/pipeline.py
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import ConfigError, TrainConfig, parse_config_text
from .evaluation import EvalReport, encode_dataset, evaluate, latent_entropy
from .local_loader import BatchIterator, Dataset
from .losses import (AnchorSet, Assignment, assign_anchors, init_anchors, init_anchors_from_features,
                     kl_diag_gaussian, kmeans_loss, kmeans_update, mean_pairwise_anchor_distance, metric_terms,
                     nebula_loss, reconstruction_loss, relocate_empty_anchors, robbins_monro_update, total_loss)
from .models import MlpVae, init_weights
from .optim import Optimizer, OptimizerError, build_optimizer
from .save_data import CheckpointError, load_checkpoint, save_checkpoint
from .tensor import NumericError, Tensor, backward, reset_tape

METRICS_COLUMNS = ["step", "epoch", "loss_total", "loss_recon", "loss_kl", "loss_nebula", "loss_pair",
                   "loss_triplet", "elbo", "latent_entropy", "mean_assignment_count"]
BASELINE_COLUMNS = ["step", "epoch", "loss_total", "loss_recon", "loss_kl", "kmeans_loss", "anchor_shift", "elbo"]
SWEEP_COLUMNS = ["mode", "anchors", "rel", "delta1", "delta2", "delta3", "accuracy"]
ABLATION_COLUMNS = ["variant", "rel", "delta1", "delta2", "delta3", "accuracy"]
SWEEP_MODES = ("nvc_no_mass", "nvc", "nvc_ml")
ABLATION_VARIANTS: Dict[str, Dict] = {
    "vae": {"mode": "vae"},
    "nvc": {"mode": "nvc"},
    "nvc_no_mass": {"mode": "nvc_no_mass"},
    "nvc_ml": {"mode": "nvc_ml"},
    "nvc_ml_no_pair": {"mode": "nvc_ml", "weight_pair": 0.0},
    "nvc_ml_no_triplet": {"mode": "nvc_ml", "weight_triplet": 0.0},
}
FLOAT_FORMAT = "%.9g"

# Errors after which a sweep or ablation cell is recorded as failed and the run continues
CELL_ERRORS = (NumericError, OptimizerError, ValueError, RuntimeError)


class TrainingAborted(RuntimeError):
    """A loss term (or the backward pass) produced non-finite values; ``term`` names it."""

    def __init__(self, term: str, message: str):
        super().__init__(f"training aborted, non-finite '{term}': {message}")
        self.term = term


@dataclass
class MetricsRecord:
    step: int
    epoch: int
    loss_total: float
    loss_recon: float
    loss_kl: float
    loss_nebula: float
    loss_pair: float
    loss_triplet: float
    elbo: float
    latent_entropy: float
    mean_assignment_count: float


@dataclass
class Run:
    """Everything one training run mutates: resolved config, model, anchors and optimizer."""
    config: TrainConfig
    model: MlpVae
    anchors: Optional[AnchorSet]
    optimizer: Optimizer


@dataclass
class TrainResult:
    run: Run
    metrics: pd.DataFrame
    steps: int
    out_dir: Optional[Path] = None
    records: List[MetricsRecord] = field(default_factory=list)
    # euclidean norm of the anchor change per step (empty when the anchors are frozen)
    anchor_shifts: List[float] = field(default_factory=list)

    @property
    def model(self) -> MlpVae:
        return self.run.model

    @property
    def anchors(self) -> Optional[AnchorSet]:
        return self.run.anchors


# ==============================================================
# RUN SETUP
# ==============================================================

def resolve_config(config: TrainConfig, dataset: Dataset) -> TrainConfig:
    """
    Fills the data-dependent keys: ``input_dim`` from the samples and ``decoder = auto``
    as Bernoulli for image data, Gaussian for synthetic data.

    :raises ConfigError: If a configured ``input_dim`` does not match the data.
    """
    if config.input_dim not in (0, dataset.input_dim):
        raise ConfigError("input_dim", f"configured {config.input_dim} but the data has {dataset.input_dim} features")
    decoder = config.decoder
    if decoder == "auto":
        decoder = "bernoulli" if dataset.kind == "mnist" else "gaussian"
    return config.replace(input_dim=dataset.input_dim, decoder=decoder)


def build_run(config: TrainConfig, dataset: Dataset) -> Run:
    """
    Initializes model, anchors and optimizer from independent seed sub-streams.

    Anchors join the optimizer only when the nebula term is active; in ``vae`` mode no
    anchors exist, so vae runs do not depend on the anchor count.
    """
    config = resolve_config(config, dataset)
    if config.effective_mode == "vae" and config.mode != "vae":
        print("Warnung: anchors = 0, Lauf erfolgt im Modus 'vae'.")
    elif config.mode == "vae" and config.anchors > 0:
        print(f"Warnung: Modus 'vae' ignoriert anchors = {config.anchors}.")
    if config.supervised_metric and config.uses_metric and dataset.labels is None:
        raise ConfigError("supervised_metric", "the training data has no labels")

    model = init_weights(config.model_config(config.input_dim, config.decoder))
    anchors = initial_anchors(config, model, dataset) if config.uses_anchors else None
    params: Dict[str, Tensor] = dict(model.parameters())
    if anchors is not None and config.loss_weights[2] > 0:
        params["anchors"] = anchors.anchors
    return Run(config, model, anchors, build_optimizer(config.optimizer, params, config.lr))


def initial_anchors(config: TrainConfig, model: MlpVae, dataset: Dataset) -> AnchorSet:
    """
    ``anchor_init = normal`` draws the anchors from seed sub-stream [seed, 2]; ``data`` places
    them on the eval-mode latents of the untrained encoder in farthest-point order.
    """
    if config.anchor_init == "data":
        return init_anchors_from_features(encode_dataset(model, dataset.samples), config.anchors)
    return init_anchors(config.anchors, config.latent_dim, [config.seed, 2])


def _term(name: str, fn, *args):
    """Evaluates one forward piece and names it if it turns non-finite."""
    try:
        value = fn(*args)
    except NumericError as e:
        raise TrainingAborted(name, str(e)) from e
    for tensor in value if isinstance(value, tuple) else (value,):
        if isinstance(tensor, Tensor) and not np.all(np.isfinite(tensor.data)):
            raise TrainingAborted(name, "loss value is not finite")
    return value


def _backward(run: Run, loss: Tensor):
    try:
        backward(loss)
    except NumericError as e:
        raise TrainingAborted("backward", str(e)) from e
    run.optimizer.step()


def _zero(dtype) -> Tensor:
    return Tensor(np.zeros((), dtype=dtype))


def _occupancy(assignment: Optional[Assignment], m: int) -> float:
    if assignment is None:
        return 0.0
    counts = assignment.counts(m)
    return float(counts.sum() / max(int(np.count_nonzero(counts)), 1))


def _batch_entropy(z: np.ndarray) -> float:
    return latent_entropy(z) if len(z) >= 2 else 0.0


# ==============================================================
# TRAINING STEP
# ==============================================================

def train_step(run: Run, x: np.ndarray, labels: Optional[np.ndarray], step: int, epoch: int) -> MetricsRecord:
    """
    One optimization step: encode, assign anchors, evaluate the losses of the mode, backward
    and update weights (and anchors when the nebula term is active).

    :raises TrainingAborted: If a loss term or a gradient becomes non-finite.
    """
    config, model, anchors = run.config, run.model, run.anchors
    w_recon, w_kl, w_nebula, w_metric = config.loss_weights
    try:
        latent = _term("encode", model.encode, x)
        pred = _term("decode", model.decode, latent.z)
        recon = _term("recon", reconstruction_loss, pred, x, config.decoder)
        kl = _term("kl", kl_diag_gaussian, latent.mu, latent.logvar)
        zero = _zero(recon.dtype)

        assignment = assign_anchors(latent.z, anchors) if anchors is not None else None
        nebula = zero
        if w_nebula > 0:
            nebula = _term("nebula", nebula_loss, latent.z, anchors, config.nebula_mode, assignment, config.clamp_d,
                           config.nebula_gradient)
        pair, triplet_term, metric = zero, zero, zero
        if w_metric > 0 and len(x) >= 2:
            metric_labels = labels if config.supervised_metric else assignment.labels
            pair, triplet_term = _term("metric", metric_terms, latent.z, metric_labels)
            metric = config.weight_pair * pair + config.weight_triplet * triplet_term

        loss = _term("total", total_loss, recon, kl, nebula, metric, config.loss_weights)
        _backward(run, loss)
    except TrainingAborted:
        reset_tape()
        raise

    recon_value, kl_value = recon.item(), kl.item()
    return MetricsRecord(
        step=step, epoch=epoch, loss_total=loss.item(), loss_recon=recon_value, loss_kl=kl_value,
        loss_nebula=nebula.item(), loss_pair=pair.item(), loss_triplet=triplet_term.item(),
        elbo=-(recon_value + kl_value), latent_entropy=_batch_entropy(latent.z.data),
        mean_assignment_count=_occupancy(assignment, anchors.m if anchors is not None else 0))


# ==============================================================
# CHECKPOINTS
# ==============================================================

def checkpoint_sections(run: Run) -> Dict[str, np.ndarray]:
    sections = {f"model.{name}": value for name, value in run.model.state_dict().items()}
    if run.anchors is not None:
        sections["anchors"] = run.anchors.anchors.data
    sections.update({f"optim.{key}": value for key, value in run.optimizer.state_dict().items()})
    return sections


def save_run(run: Run, path: Path):
    save_checkpoint(path, run.config.to_text(), checkpoint_sections(run))


def load_run(path: Path) -> Run:
    """
    Restores config, model, anchors and optimizer state from a checkpoint.

    :raises CheckpointError: On format errors or missing sections.
    :raises ConfigError: If the config snapshot is invalid.
    :rtype: Run
    """
    checkpoint = load_checkpoint(Path(path))
    config = parse_config_text(checkpoint.config_text)
    if config.input_dim < 1 or config.decoder == "auto":
        raise CheckpointError(f"'{Path(path).name}': config snapshot is not resolved (input_dim/decoder)")
    model = init_weights(config.model_config(config.input_dim, config.decoder))
    state = {name[len("model."):]: value for name, value in checkpoint.sections.items() if name.startswith("model.")}
    try:
        model.load_state_dict(state)
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"'{Path(path).name}': {e}")

    anchors = None
    if config.uses_anchors:
        if "anchors" not in checkpoint.sections:
            raise CheckpointError(f"'{Path(path).name}': missing section 'anchors'")
        anchors = AnchorSet(Tensor(checkpoint.sections["anchors"], requires_grad=True), [config.seed, 2])
    params: Dict[str, Tensor] = dict(model.parameters())
    if anchors is not None and config.loss_weights[2] > 0:
        params["anchors"] = anchors.anchors
    optimizer = build_optimizer(config.optimizer, params, config.lr)
    optimizer.load_state_dict({name[len("optim."):]: value for name, value in checkpoint.sections.items()
                               if name.startswith("optim.")})
    return Run(config, model, anchors, optimizer)


def _write_metrics(frame: pd.DataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    print(f"Metriken geschrieben nach '{path}'.")


# ==============================================================
# TRAINING LOOP
# ==============================================================

def train(config: TrainConfig, dataset: Dataset, out_dir: Optional[Path] = None, run: Optional[Run] = None) -> TrainResult:
    """
    Trains model and anchors on one dataset.

    Writes ``metrics.csv``, ``final.ckpt`` and ``config.txt`` into ``out_dir`` (when given) and
    replaces ``last.ckpt`` at every epoch end, so an interrupted run keeps its last complete
    epoch. Metrics are recorded at step 1 and every ``log_every`` steps after that.
    Trainable anchors that end an epoch without assigned latents are relocated before the
    checkpoint is written (``relocate_anchors``).

    :param config: Run configuration.
    :type config: TrainConfig
    :param dataset: Training split.
    :type dataset: Dataset
    :param out_dir: Output directory, or None to keep everything in memory.
    :type out_dir: Optional[Path]
    :param run: Pre-built run (model, anchors, optimizer); built from ``config`` when omitted.
    :type run: Optional[Run]
    :raises TrainingAborted: If a loss term becomes non-finite (metrics so far are still written).
    :return: The trained run and its metrics.
    :rtype: TrainResult
    """
    run = run or build_run(config, dataset)
    config = run.config
    out_dir = Path(out_dir) if out_dir is not None else None
    print(f"Starte Training: mode={config.effective_mode}, anchors={run.anchors.m if run.anchors else 0}, "
          f"samples={len(dataset)}, epochs={config.epochs}, seed={config.seed}...")

    records: List[MetricsRecord] = []
    shifts: List[float] = []
    trainable = _anchors_trainable(run)
    step = 0
    done = False
    try:
        for epoch in range(config.epochs):
            epoch_records: List[MetricsRecord] = []
            epoch_shifts: List[float] = []
            for x, labels in BatchIterator(dataset, config.batch_size, epoch, config.seed, config.uses_metric):
                step += 1
                before = run.anchors.anchors.data.astype(np.float64) if trainable else None
                record = train_step(run, x, labels, step, epoch)
                if trainable:
                    epoch_shifts.append(float(np.linalg.norm(run.anchors.anchors.data - before)))
                epoch_records.append(record)
                if (step - 1) % config.log_every == 0:
                    records.append(record)
                    print(f"  step {step}: loss={record.loss_total:.4f} recon={record.loss_recon:.4f} "
                          f"kl={record.loss_kl:.4f} nebula={record.loss_nebula:.4f}")
                if config.max_steps and step >= config.max_steps:
                    done = True
                    break
            shifts.extend(epoch_shifts)
            _epoch_summary(run, epoch, epoch_records, epoch_shifts)
            if trainable and config.relocate_anchors:
                relocate_anchors(run, dataset)
            if out_dir is not None:
                save_run(run, out_dir / "last.ckpt")
            if done:
                break
    finally:
        metrics = pd.DataFrame([asdict(r) for r in records], columns=METRICS_COLUMNS)
        if out_dir is not None:
            _write_metrics(metrics, out_dir / "metrics.csv")

    if out_dir is not None:
        save_run(run, out_dir / "final.ckpt")
        (out_dir / "config.txt").write_text(config.to_text(), encoding="utf-8")
    print(f"Training abgeschlossen nach {step} Schritten.")
    return TrainResult(run, metrics, step, out_dir, records, shifts)


def _anchors_trainable(run: Run) -> bool:
    return run.anchors is not None and "anchors" in run.optimizer.params


def relocate_anchors(run: Run, dataset: Dataset) -> np.ndarray:
    """
    Moves anchors that no eval-mode latent of ``dataset`` is assigned to onto the farthest
    latents and clears their optimizer history.

    :return: Indices of the moved anchors.
    :rtype: np.ndarray
    """
    if run.anchors is None or len(dataset) == 0:
        return np.empty(0, dtype=np.int64)
    anchors, moved = relocate_empty_anchors(encode_dataset(run.model, dataset.samples), run.anchors)
    if moved.size:
        run.anchors.anchors.data[...] = anchors
        run.optimizer.reset_rows("anchors", moved)
        print(f"  {moved.size} Anker ohne zugeordnete Latents versetzt: {moved.tolist()}")
    return moved


def _epoch_summary(run: Run, epoch: int, records: Sequence[MetricsRecord], shifts: Sequence[float] = ()):
    if not records:
        return
    mean = {key: float(np.mean([getattr(r, key) for r in records]))
            for key in ("loss_total", "loss_recon", "loss_kl", "loss_nebula")}
    line = (f"Epoche {epoch}: loss={mean['loss_total']:.4f} recon={mean['loss_recon']:.4f} "
            f"kl={mean['loss_kl']:.4f} nebula={mean['loss_nebula']:.4f}")
    if run.anchors is not None:
        line += f" anchor_dist={mean_pairwise_anchor_distance(run.anchors):.4f}"
    if shifts:
        line += f" anchor_shift={float(np.mean(shifts)):.6f}"
    print(line)


# ==============================================================
# K-MEANS BASELINE
# ==============================================================

def kmeans_baseline_train(config: TrainConfig, dataset: Dataset, out_dir: Optional[Path] = None,
                          update: Optional[str] = None, centers: Optional[np.ndarray] = None) -> TrainResult:
    """
    Same loop as :func:`train`, but the anchors are cluster centers updated directly by
    K-means (mean of the assigned latents) or Robbins-Monro steps instead of gradients.

    Assignment, ``kmeans_loss`` and the center update use the encoder means, so a data set
    sitting exactly on the centers is a fixed point. The encoder is still pulled towards the
    (constant) centers by the Euclidean attraction of the sampled latents, weighted with
    ``weights.nebula``. Writes ``baseline_metrics.csv``; the epoch summary reports the mean
    center shift per step.

    :param update: ``kmeans`` or ``robbins_monro``; defaults to ``config.kmeans_update``.
    :type update: Optional[str]
    :param centers: Initial m×latent_dim centers; otherwise chosen by ``anchor_init``.
    :type centers: Optional[np.ndarray]
    :raises ConfigError: If no anchors are configured or ``centers`` has the wrong shape.
    :rtype: TrainResult
    """
    config = config.replace(kmeans_update=update or config.kmeans_update)
    if config.anchors < 1:
        raise ConfigError("anchors", "the K-means baseline needs at least one center")
    config = resolve_config(config.replace(mode="nvc_no_mass"), dataset)
    model = init_weights(config.model_config(config.input_dim, config.decoder))
    if centers is not None:
        initial = np.asarray(centers, dtype=np.float32)
        if initial.shape != (config.anchors, config.latent_dim):
            raise ConfigError("anchors", f"initial centers must have shape {(config.anchors, config.latent_dim)}, "
                                         f"got {initial.shape}")
        centers = AnchorSet(Tensor(initial.copy()))
    else:
        centers = initial_anchors(config, model, dataset)
    centers.anchors.requires_grad = False
    run = Run(config, model, centers, build_optimizer(config.optimizer, model.parameters(), config.lr))
    print(f"Starte K-Means-Baseline ({config.kmeans_update}) mit {config.anchors} Zentren...")

    rows: List[Dict] = []
    shifts: List[float] = []
    step = 0
    done = False
    for epoch in range(config.epochs):
        epoch_rows: List[Dict] = []
        for x, _ in BatchIterator(dataset, config.batch_size, epoch, config.seed):
            step += 1
            row = _baseline_step(run, x, step, epoch)
            epoch_rows.append(row)
            if (step - 1) % config.log_every == 0:
                rows.append(row)
            if config.max_steps and step >= config.max_steps:
                done = True
                break
        shifts.extend(row["anchor_shift"] for row in epoch_rows)
        if epoch_rows:
            print(f"Epoche {epoch}: loss={np.mean([r['loss_total'] for r in epoch_rows]):.4f} "
                  f"kmeans_loss={np.mean([r['kmeans_loss'] for r in epoch_rows]):.6f} "
                  f"anchor_shift={np.mean([r['anchor_shift'] for r in epoch_rows]):.6f}")
        if done:
            break

    metrics = pd.DataFrame(rows, columns=BASELINE_COLUMNS)
    if out_dir is not None:
        out_dir = Path(out_dir)
        _write_metrics(metrics, out_dir / "baseline_metrics.csv")
        save_run(run, out_dir / "final.ckpt")
    return TrainResult(run, metrics, step, out_dir, anchor_shifts=shifts)


def _baseline_step(run: Run, x: np.ndarray, step: int, epoch: int) -> Dict:
    config, model, centers = run.config, run.model, run.anchors
    w_recon, w_kl, w_nebula, _ = config.loss_weights
    try:
        latent = _term("encode", model.encode, x)
        recon = _term("recon", reconstruction_loss, model.decode(latent.z), x, config.decoder)
        kl = _term("kl", kl_diag_gaussian, latent.mu, latent.logvar)
        # centers follow the encoder means; the sampled latents are only pulled towards them
        assignment = assign_anchors(latent.mu, centers)
        attraction = _zero(recon.dtype)
        if w_nebula > 0:
            attraction = _term("nebula", nebula_loss, latent.z, centers, "euclidean", assignment)
        loss = _term("total", total_loss, recon, kl, attraction, _zero(recon.dtype), (w_recon, w_kl, w_nebula, 0.0))
        _backward(run, loss)
    except TrainingAborted:
        reset_tape()
        raise

    before = centers.anchors.data.copy()
    means = latent.mu.data
    within = kmeans_loss(means, before, assignment)
    if config.kmeans_update == "kmeans":
        after = kmeans_update(means, assignment, before)
    else:
        after = robbins_monro_update(before, means, assignment, config.kmeans_lr)
    centers.anchors.data[...] = after
    return {"step": step, "epoch": epoch, "loss_total": loss.item(), "loss_recon": recon.item(),
            "loss_kl": kl.item(), "kmeans_loss": within,
            "anchor_shift": float(np.linalg.norm(after.astype(np.float64) - before)),
            "elbo": -(recon.item() + kl.item())}


# ==============================================================
# EXPERIMENTS (train + evaluate, sweep, ablation)
# ==============================================================

def run_experiment(config: TrainConfig, train_set: Dataset, test_set: Dataset,
                   out_dir: Optional[Path] = None) -> Tuple[TrainResult, EvalReport]:
    result = train(config, train_set, out_dir)
    report = evaluate(result.model, result.anchors, train_set, test_set, result.run.config.eval_epsilon)
    return result, report


def _dedupe(counts: Iterable[int]) -> List[int]:
    unique: List[int] = []
    for count in counts:
        if count < 1:
            raise ConfigError("anchors", f"sweep anchor counts must be >= 1, got {count}")
        if count in unique:
            print(f"Warnung: doppelte Anchor-Anzahl {count} wird ignoriert.")
            continue
        unique.append(count)
    return unique


def _report_row(report: Optional[EvalReport]) -> Dict:
    if report is None:
        return {"rel": np.nan, "delta1": np.nan, "delta2": np.nan, "delta3": np.nan, "accuracy": np.nan}
    accuracy = report.anchor_accuracy if report.anchor_accuracy is not None else np.nan
    return {"rel": report.rel, "delta1": report.delta1, "delta2": report.delta2, "delta3": report.delta3,
            "accuracy": accuracy}


def _run_cell(name: str, config: TrainConfig, train_set: Dataset, test_set: Dataset,
              out_dir: Optional[Path]) -> Optional[EvalReport]:
    try:
        _, report = run_experiment(config, train_set, test_set, out_dir)
        return report
    except CELL_ERRORS as e:
        print(f"Warnung: Lauf '{name}' fehlgeschlagen: {e}")
        return None


def anchor_sweep(base_config: TrainConfig, anchor_counts: Sequence[int], train_set: Dataset, test_set: Dataset,
                 modes: Sequence[str] = SWEEP_MODES, out_dir: Optional[Path] = None) -> pd.DataFrame:
    """
    One independent run per (mode, anchor count) with otherwise identical settings.

    Duplicate counts are dropped with a warning; a failing cell is reported and recorded with
    empty metric fields while the sweep continues. Writes ``sweep.csv`` into ``out_dir``.

    :param base_config: Shared settings (seed, architecture, schedule).
    :type base_config: TrainConfig
    :param anchor_counts: Anchor counts, each >= 1.
    :type anchor_counts: Sequence[int]
    :param modes: Modes to sweep.
    :type modes: Sequence[str]
    :raises ConfigError: On a count < 1 or an unknown mode.
    :rtype: pd.DataFrame
    """
    counts = _dedupe(anchor_counts)
    for mode in modes:
        if mode not in SWEEP_MODES:
            raise ConfigError("mode", f"sweep modes must be among {', '.join(SWEEP_MODES)}, got '{mode}'")
    out_dir = Path(out_dir) if out_dir is not None else None
    rows = []
    for mode in modes:
        for count in counts:
            cell_dir = out_dir / f"{mode}_m{count}" if out_dir is not None else None
            report = _run_cell(f"{mode}/m={count}", base_config.replace(mode=mode, anchors=count),
                               train_set, test_set, cell_dir)
            rows.append({"mode": mode, "anchors": count, **_report_row(report)})
    frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    if out_dir is not None:
        _write_metrics(frame, out_dir / "sweep.csv")
    return frame


def loss_ablation(base_config: TrainConfig, train_set: Dataset, test_set: Dataset,
                  variants: Optional[Sequence[str]] = None, out_dir: Optional[Path] = None) -> pd.DataFrame:
    """Trains every loss variant with the same seed and architecture; writes ``ablation.csv``."""
    names = list(variants) if variants is not None else list(ABLATION_VARIANTS)
    unknown = [name for name in names if name not in ABLATION_VARIANTS]
    if unknown:
        raise ConfigError("variant", f"unknown ablation variants {unknown}")
    out_dir = Path(out_dir) if out_dir is not None else None
    rows = []
    for name in names:
        cell_dir = out_dir / name if out_dir is not None else None
        report = _run_cell(name, base_config.replace(**ABLATION_VARIANTS[name]), train_set, test_set, cell_dir)
        rows.append({"variant": name, **_report_row(report)})
    frame = pd.DataFrame(rows, columns=ABLATION_COLUMNS)
    if out_dir is not None:
        _write_metrics(frame, out_dir / "ablation.csv")
    return frame
