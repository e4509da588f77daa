"""
Training loops and experiment presets.

Every iteration draws one shuffled labeled batch and one contiguous unlabeled window,
computes supervised + lambda * continuity and applies one Adam step. Initialisation,
labeled batching and unlabeled sampling use three independent random streams, so a
lambda = 0 run never touches the unlabeled stream.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

import config
from tc_core import regressor
from tc_core.angular import MetricsReport, circular_std, decode_many, encode_many, evaluate
from tc_core.errors import ConfigConflictError, ShapeMismatchError
from tc_core.losses import combined_loss, continuity_loss_with_grad, sample_triplets, supervised_loss
from tc_core.models import DatasetConfig, ExperimentConfig, TrainConfig
from tc_core.regressor import OptimizerState, RegressorParams
from tc_core.synth import (
    DomainSpec, HeadingDataset, LabeledSet, SampleSequence, TrajectoryParams, apply_domain_shift,
    build_dataset, gen_trajectory, make_domain, relabel, render_sequence_features, stack_sequences,
    trajectory_arrays,
)

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["iteration", "supervised_loss", "continuity_loss", "combined_loss",
                   "val_mse", "val_angle_diff", "val_accuracy"]
LABEL_FRACTION_COLUMNS = ["fraction", "method", "seed", "final_val_mse"]
FOUR_SETTING_COLUMNS = ["setting", "seed", "iteration", "val_loss"]
LAMBDA_COLUMNS = ["lambda", "seed", "final_val_mse", "seq_output_std"]
FINETUNE_COLUMNS = ["method", "seed", "mse", "angle_diff", "accuracy"]
CIRCLE_COLUMNS = ["frame", "x", "y", "theta_true", "theta_pred"]

Predictor = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class StepRecord:
    iteration: int
    supervised_loss: float
    continuity_loss: float
    combined_loss: float


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    supervised_loss: float
    continuity_loss: float
    combined_loss: float
    validation: Optional[MetricsReport]

    def as_row(self) -> Dict[str, float]:
        val = self.validation
        nan = float("nan")
        return {
            "iteration": self.iteration,
            "supervised_loss": self.supervised_loss,
            "continuity_loss": self.continuity_loss,
            "combined_loss": self.combined_loss,
            "val_mse": val.mse if val else nan,
            "val_angle_diff": val.mean_angle_diff if val else nan,
            "val_accuracy": val.accuracy if val else nan,
        }


@dataclass
class TrainHistory:
    records: List[HistoryRecord] = field(default_factory=list)

    def append(self, record: HistoryRecord) -> None:
        if self.records and record.iteration < self.records[-1].iteration:
            raise ValueError("history iterations must be non-decreasing")
        self.records.append(record)

    @property
    def final(self) -> HistoryRecord:
        return self.records[-1]

    @property
    def initial(self) -> HistoryRecord:
        return self.records[0]

    def to_rows(self) -> List[Dict[str, float]]:
        return [r.as_row() for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class TrainStreams:
    labeled: np.random.Generator
    unlabeled: np.random.Generator

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "TrainStreams":
        return cls(np.random.default_rng(cfg.labeled_stream_seed), np.random.default_rng(cfg.unlabeled_stream_seed))


# ---- Single runs ----

def _min_window(cfg: TrainConfig) -> int:
    return 3 if cfg.loss.variant == "triplet" else 2


def check_run_inputs(labeled: Optional[LabeledSet], unlabeled: Sequence[SampleSequence], cfg: TrainConfig) -> None:
    """Reject data/config combinations that cannot train, before any compute."""
    if cfg.loss.supervised_weight > 0 and (labeled is None or len(labeled) == 0):
        raise ConfigConflictError("supervised term enabled but the labeled set is empty")
    if cfg.loss.lambda_ > 0:
        usable = [s for s in unlabeled if len(s) >= _min_window(cfg)]
        if not usable:
            raise ConfigConflictError(
                f"lambda = {cfg.loss.lambda_} > 0 requires unlabeled sequences of at least {_min_window(cfg)} frames"
            )


def draw_unlabeled_window(unlabeled: Sequence[SampleSequence], cfg: TrainConfig,
                          rng: np.random.Generator) -> Tuple[SampleSequence, Optional[np.ndarray]]:
    """One random contiguous window (and sampled triplets for the triplet variant)."""
    usable = [s for s in unlabeled if len(s) >= _min_window(cfg)]
    if not usable:
        raise ValueError("no unlabeled sequence is long enough for the continuity loss")
    seq = usable[int(rng.integers(len(usable)))]
    length = min(cfg.unlabeled_sequence_length, len(seq))
    start = int(rng.integers(len(seq) - length + 1))
    window = seq.window(start, length)
    triplets = None
    if cfg.loss.variant == "triplet":
        triplets = sample_triplets(window.frames, cfg.loss.triplet_samples_per_sequence, rng, cfg.loss.near_window)
    return window, triplets


def train_step(params: RegressorParams, state: OptimizerState, labeled: Optional[LabeledSet],
               unlabeled: Sequence[SampleSequence], cfg: TrainConfig, streams: TrainStreams,
               iteration: int = 0) -> Tuple[RegressorParams, OptimizerState, StepRecord]:
    """
    One optimisation step.

    Args:
        params: current model
        state: optimiser state
        labeled: labeled features/labels (unused when supervised_weight == 0)
        unlabeled: sequences for the continuity term (unused when lambda == 0)
        cfg: run configuration
        streams: labeled / unlabeled random streams, consumed here
        iteration: index stored in the returned record

    Returns:
        (new params, new state, StepRecord with the losses before the update)
    """
    loss_cfg = cfg.loss
    batch = None
    if loss_cfg.supervised_weight > 0:
        if labeled is None or len(labeled) == 0:
            raise ValueError("labeled set is empty")
        size = min(cfg.labeled_batch_size, len(labeled))
        idx = streams.labeled.choice(len(labeled), size=size, replace=False)
        batch = (labeled.features[idx], labeled.labels[idx])

    window = triplets = None
    if loss_cfg.lambda_ > 0:
        window, triplets = draw_unlabeled_window(unlabeled, cfg, streams.unlabeled)

    breakdown, grads = regressor.loss_and_grad(params, batch, window, loss_cfg, triplets)
    params, state = regressor.step(params, grads, state)
    record = StepRecord(iteration, breakdown.supervised, breakdown.continuity, breakdown.total)
    logger.debug(f"step {iteration}: sup={record.supervised_loss:.6g} cont={record.continuity_loss:.6g}")
    return params, state, record


def predict(params: RegressorParams, features: np.ndarray) -> np.ndarray:
    return regressor.forward_batch(params, features)


def validate(params: RegressorParams, val: Sequence[SampleSequence]) -> Optional[MetricsReport]:
    if not val:
        return None
    features, labels = stack_sequences(val, params.input_dim)
    return evaluate(predict(params, features), labels, strict=False)


def _initial_record(params: RegressorParams, labeled: Optional[LabeledSet], unlabeled: Sequence[SampleSequence],
                    val: Sequence[SampleSequence], cfg: TrainConfig) -> HistoryRecord:
    # Full labeled set and the first window of the first sequence; triplets come from a
    # fixed-seed side generator so the training streams stay untouched
    loss_cfg = cfg.loss
    sup = 0.0
    if loss_cfg.supervised_weight > 0 and labeled is not None and len(labeled):
        sup = supervised_loss(predict(params, labeled.features), labeled.labels)
    cont = 0.0
    if loss_cfg.lambda_ > 0:
        seq = next(s for s in unlabeled if len(s) >= _min_window(cfg))
        window = seq.window(0, min(cfg.unlabeled_sequence_length, len(seq)))
        triplets = None
        if loss_cfg.variant == "triplet":
            side = np.random.default_rng(config.SIDE_TRIPLET_SEED)
            triplets = sample_triplets(window.frames, loss_cfg.triplet_samples_per_sequence, side, loss_cfg.near_window)
        cont, _ = continuity_loss_with_grad(predict(params, window.features), window.frames, loss_cfg, triplets)
    total = combined_loss(sup, cont, loss_cfg.lambda_, loss_cfg.supervised_weight)
    return HistoryRecord(0, sup, cont, total, validate(params, val))


def _check_data_dims(params: RegressorParams, labeled: Optional[LabeledSet], unlabeled: Sequence[SampleSequence],
                     val: Sequence[SampleSequence]) -> None:
    dims = set()
    if labeled is not None and len(labeled):
        dims.add(labeled.features.shape[1])
    dims.update(s.features.shape[1] for s in unlabeled)
    dims.update(s.features.shape[1] for s in val)
    for d in dims:
        regressor.check_compatible(params, d)


def train_run(labeled: Optional[LabeledSet], unlabeled: Sequence[SampleSequence], val: Sequence[SampleSequence],
              cfg: TrainConfig, params: Optional[RegressorParams] = None) -> Tuple[RegressorParams, TrainHistory]:
    """
    Run cfg.iterations steps, evaluating on `val` at iteration 0, every eval_every
    iterations and after the last one.

    Args:
        labeled: labeled set (may be None/empty when supervised_weight == 0)
        unlabeled: unlabeled sequences (may be empty when lambda == 0)
        val: validation sequences
        cfg: TrainConfig
        params: starting model; initialised from cfg.regressor and cfg.init_seed when None

    Returns:
        (final params, TrainHistory)
    """
    if params is None:
        params = regressor.init(cfg.regressor.model_copy(update={"seed": cfg.init_seed}))
    _check_data_dims(params, labeled, unlabeled, val)
    check_run_inputs(labeled, unlabeled, cfg)

    state = regressor.init_optimizer(params, cfg.optimizer)
    streams = TrainStreams.from_config(cfg)
    history = TrainHistory()
    history.append(_initial_record(params, labeled, unlabeled, val, cfg))
    logger.info(
        f"Training {cfg.iterations} iterations (lambda={cfg.loss.lambda_}, variant={cfg.loss.variant}, "
        f"labeled={0 if labeled is None else len(labeled)}, unlabeled sequences={len(unlabeled)})"
    )

    for it in range(1, cfg.iterations + 1):
        params, state, rec = train_step(params, state, labeled, unlabeled, cfg, streams, it)
        if it % cfg.eval_every == 0 or it == cfg.iterations:
            report = validate(params, val)
            history.append(HistoryRecord(it, rec.supervised_loss, rec.continuity_loss, rec.combined_loss, report))
            if report is not None:
                logger.info(f"iter {it}: loss={rec.combined_loss:.5g} val {report.format_line()}")
    return params, history


def finetune(pretrained: RegressorParams, labeled: Optional[LabeledSet], unlabeled: Sequence[SampleSequence],
             val: Sequence[SampleSequence], cfg: TrainConfig) -> Tuple[RegressorParams, TrainHistory]:
    """Continue training every layer of `pretrained` on new-domain data with a fresh optimiser."""
    try:
        _check_data_dims(pretrained, labeled, unlabeled, val)
    except ShapeMismatchError:
        logger.error(f"Fine-tuning data does not fit a model with input dim {pretrained.input_dim}")
        raise
    return train_run(labeled, unlabeled, val, cfg, params=pretrained)


# ---- Worker pool ----

def run_parallel(fn: Callable, tasks: Sequence, jobs: int = 1) -> List:
    """Map fn over tasks, optionally in worker processes; results keep task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


# ---- Experiment presets ----

def _dataset_seeds(base_seed: int, run_seed: int) -> Tuple[int, int]:
    """Independent (source, target) dataset seeds for one run seed."""
    state = np.random.SeedSequence([base_seed, run_seed]).generate_state(2)
    return int(state[0]), int(state[1])


def _train_config(exp: ExperimentConfig, seed: int, lambda_: float, iterations: Optional[int] = None,
                  supervised_weight: float = 1.0) -> TrainConfig:
    cfg = exp.train.with_seeds(seed).with_lambda(lambda_)
    update = {"regressor": cfg.regressor.model_copy(update={"input_dim": exp.dataset.feature_dim})}
    if iterations is not None:
        update["iterations"] = iterations
    if supervised_weight != cfg.loss.supervised_weight:
        update["loss"] = cfg.loss.model_copy(update={"supervised_weight": supervised_weight})
    return cfg.model_copy(update=update)


def _domains(exp: ExperimentConfig) -> Tuple[DomainSpec, DomainSpec]:
    ds = exp.dataset
    source = make_domain(ds.feature_dim, ds.domain_seed, ds.noise_std)
    return source, apply_domain_shift(source, exp.shift_seed, exp.shift_strength)


def source_and_target(exp: ExperimentConfig, seed: int, target_fraction: float) -> Tuple[HeadingDataset, HeadingDataset]:
    source_domain, target_domain = _domains(exp)
    source_seed, target_seed = _dataset_seeds(exp.dataset.seed, seed)
    source = build_dataset(exp.dataset.model_copy(update={"seed": source_seed}), source_domain)
    target = build_dataset(
        exp.dataset.model_copy(update={"seed": target_seed, "label_fraction": target_fraction}), target_domain
    )
    return source, target


def _label_fraction_task(task) -> List[Dict]:
    exp, fraction, seed = task
    source_seed, _ = _dataset_seeds(exp.dataset.seed, seed)
    ds_cfg: DatasetConfig = exp.dataset.model_copy(update={"label_fraction": fraction, "seed": source_seed})
    data = build_dataset(ds_cfg)
    rows = []
    for method, lam in (("SL", 0.0), ("SSL", exp.ssl_lambda)):
        _, history = train_run(data.labeled_set(), data.unlabeled, data.val, _train_config(exp, seed, lam))
        rows.append({"fraction": fraction, "method": method, "seed": seed,
                     "final_val_mse": history.final.validation.mse})
    return rows


def label_fraction_sweep(fractions: Sequence[float], seeds: Sequence[int], exp: ExperimentConfig,
                         jobs: int = 1) -> List[Dict]:
    """
    SL (lambda = 0) vs SSL (lambda = exp.ssl_lambda) at each label fraction and seed.

    Returns:
        rows ordered by (fraction, method, seed) with LABEL_FRACTION_COLUMNS
    """
    for f in fractions:
        if not 0.0 < f <= 1.0:
            raise ValueError(f"label fractions must lie in (0, 1], got {f}")
    tasks = [(exp, f, s) for f in fractions for s in seeds]
    results = run_parallel(_label_fraction_task, tasks, jobs)
    rows = []
    for f_idx in range(len(fractions)):
        chunk = results[f_idx * len(seeds):(f_idx + 1) * len(seeds)]
        for method_idx in range(2):
            rows.extend(r[method_idx] for r in chunk)
    return rows


@dataclass
class SettingResult:
    setting: int
    seed: int
    history: TrainHistory


def four_setting_wiring(
    exp: ExperimentConfig, seed: int, source: HeadingDataset, target: HeadingDataset,
) -> Dict[int, Tuple[Optional[LabeledSet], List[SampleSequence], TrainConfig]]:
    """(labeled set, unlabeled sequences, fine-tuning config) per setting; all share the run's stream seeds."""
    ssl = exp.ssl_lambda
    iters = exp.finetune_iterations
    target_labeled = target.labeled_set()
    source_labeled = relabel(source, exp.four_setting_label_fraction, seed).labeled_set()
    return {
        1: (target_labeled, [], _train_config(exp, seed, 0.0, iters)),
        2: (None, target.unlabeled, _train_config(exp, seed, ssl, iters, supervised_weight=0.0)),
        3: (target_labeled, target.unlabeled, _train_config(exp, seed, ssl, iters)),
        4: (source_labeled, target.unlabeled, _train_config(exp, seed, ssl, iters)),
    }


def _four_setting_task(task) -> List[SettingResult]:
    exp, seed = task
    source, target = source_and_target(exp, seed, exp.four_setting_label_fraction)
    pretrained, _ = train_run(source.labeled_set(), source.unlabeled, source.val, _train_config(exp, seed, 0.0))
    results = []
    for setting, (labeled, unlabeled, cfg) in four_setting_wiring(exp, seed, source, target).items():
        _, history = finetune(pretrained, labeled, unlabeled, target.val, cfg)
        results.append(SettingResult(setting, seed, history))
    return results


def four_setting_experiment(seeds: Sequence[int], exp: ExperimentConfig, jobs: int = 1) -> List[SettingResult]:
    """
    Start from a model pretrained on the source domain, then fine-tune on the shifted domain with
    1 = target labels only, 2 = target unlabeled only, 3 = both from the target,
    4 = source labels + target unlabeled. Results ordered by (setting, seed).
    """
    per_seed = run_parallel(_four_setting_task, [(exp, s) for s in seeds], jobs)
    flat = [r for results in per_seed for r in results]
    return sorted(flat, key=lambda r: (r.setting, seeds.index(r.seed)))


def four_setting_rows(results: Sequence[SettingResult]) -> List[Dict]:
    """Expand each history into FOUR_SETTING_COLUMNS rows (val_loss = validation MSE)."""
    rows = []
    for r in results:
        for rec in r.history.records:
            rows.append({"setting": r.setting, "seed": r.seed, "iteration": rec.iteration,
                         "val_loss": rec.validation.mse if rec.validation else float("nan")})
    return rows


def sequence_output_std(params: RegressorParams, sequences: Sequence[SampleSequence]) -> float:
    """Circular std of decoded outputs within each sequence, averaged over sequences."""
    stds = []
    for seq in sequences:
        stds.append(circular_std(decode_many(predict(params, seq.features))))
    finite = [s for s in stds if not math.isnan(s)]
    return float(np.mean(finite)) if finite else float("nan")


def lambda_task_configs(exp: ExperimentConfig, lam: float, seed: int) -> Tuple[DatasetConfig, TrainConfig]:
    """
    Dataset and training config of one lambda-sweep run: the experiment's lambda loss
    settings, window and heading step, with labels at exp.lambda_label_fraction.
    """
    source_seed, _ = _dataset_seeds(exp.dataset.seed, seed)
    ds_cfg = exp.dataset.model_copy(update={"label_fraction": exp.lambda_label_fraction, "seed": source_seed,
                                            "max_heading_step": exp.lambda_heading_step})
    cfg = _train_config(exp, seed, lam)
    loss = exp.lambda_loss.model_copy(update={"lambda_": lam, "supervised_weight": cfg.loss.supervised_weight})
    window = min(exp.lambda_window, ds_cfg.sequence_length)
    return ds_cfg, cfg.model_copy(update={"loss": loss, "unlabeled_sequence_length": window})


def _lambda_task(task) -> Dict:
    exp, lam, seed = task
    ds_cfg, cfg = lambda_task_configs(exp, lam, seed)
    data = build_dataset(ds_cfg)
    params, history = train_run(data.labeled_set(), data.unlabeled, data.val, cfg)
    return {"lambda": lam, "seed": seed, "final_val_mse": history.final.validation.mse,
            "seq_output_std": sequence_output_std(params, data.val)}


def lambda_sweep(lambdas: Sequence[float], seeds: Sequence[int], exp: ExperimentConfig, jobs: int = 1) -> List[Dict]:
    for lam in lambdas:
        if lam < 0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
    tasks = [(exp, lam, s) for lam in lambdas for s in seeds]
    return run_parallel(_lambda_task, tasks, jobs)


def _finetune_task(task) -> List[Dict]:
    exp, seed = task
    source, target = source_and_target(exp, seed, exp.finetune_label_fraction)
    pretrained, _ = train_run(source.labeled_set(), source.unlabeled, source.val,
                              _train_config(exp, seed, exp.ssl_lambda))
    rows = []
    baseline = validate(pretrained, target.val)
    rows.append(("no-finetune", baseline))
    for method, lam in (("SL-finetune", 0.0), ("SSL-finetune", exp.ssl_lambda)):
        cfg = _train_config(exp, seed, lam, exp.finetune_iterations)
        _, history = finetune(pretrained, target.labeled_set(), target.unlabeled, target.val, cfg)
        rows.append((method, history.final.validation))
    return [{"method": m, "seed": seed, "mse": rep.mse, "angle_diff": rep.mean_angle_diff, "accuracy": rep.accuracy}
            for m, rep in rows]


def finetune_experiment(seeds: Sequence[int], exp: ExperimentConfig, jobs: int = 1) -> List[Dict]:
    """
    Pretrain (SSL) on the source domain, then compare no fine-tuning, SL fine-tuning and
    SSL fine-tuning on the shifted domain with few labels per sequence.
    Rows ordered by (method, seed).
    """
    per_seed = run_parallel(_finetune_task, [(exp, s) for s in seeds], jobs)
    rows = []
    for method_idx in range(3):
        rows.extend(r[method_idx] for r in per_seed)
    return rows


# ---- Circle evaluation ----

def oracle_predictor(features: np.ndarray, true_headings: np.ndarray) -> np.ndarray:
    """Ground-truth encoder; an upper bound for any model."""
    return encode_many(true_headings)


def model_predictor(params: RegressorParams) -> Predictor:
    def _predict(features: np.ndarray, true_headings: np.ndarray) -> np.ndarray:
        return predict(params, features)
    return _predict


def circle_eval(predictor: Union[RegressorParams, Predictor], domain: DomainSpec, radius: float = 5.0,
                frames: int = 200, seed: int = 0) -> Tuple[MetricsReport, List[Dict]]:
    """
    Walk twice around a circle, render features in `domain` and compare predicted headings
    with the tangent direction.

    Returns:
        (MetricsReport, one CIRCLE_COLUMNS row per frame; theta_pred is NaN for degenerate outputs)
    """
    if isinstance(predictor, RegressorParams):
        regressor.check_compatible(predictor, domain.feature_dim)
        predictor = model_predictor(predictor)
    points = gen_trajectory("circle", frames, TrajectoryParams(radius=radius, revolutions=2.0))
    frame_ids, positions, headings = trajectory_arrays(points)
    features = render_sequence_features(headings, domain, np.random.default_rng(seed))
    outputs = np.asarray(predictor(features, headings), dtype=np.float64)

    report = evaluate(outputs, encode_many(headings), strict=False)
    if report.degenerate:
        logger.warning(f"circle evaluation: {report.degenerate}/{frames} degenerate predictions")
    predicted = decode_many(outputs)
    rows = [{"frame": int(f), "x": float(p[0]), "y": float(p[1]), "theta_true": float(t), "theta_pred": float(q)}
            for f, p, t, q in zip(frame_ids, positions, headings, predicted)]
    return report, rows


def median_table(rows: Sequence[Dict], by: Sequence[str], value: str) -> pd.DataFrame:
    """Median of `value` over seeds for every combination of the `by` columns."""
    frame = pd.DataFrame(list(rows))
    return frame.groupby(list(by), sort=False)[value].median().reset_index()
