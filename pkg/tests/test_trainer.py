import math

import numpy as np
import pytest

from config import EnvSettings
from tc_core import regressor
from tc_core.errors import ConfigConflictError, ShapeMismatchError
from tc_core.losses import supervised_loss
from tc_core.models import OptimizerConfig, RegressorConfig, TrainConfig
from tc_core.synth import LabeledSet, build_dataset, make_domain
from tc_core.trainer import (
    FOUR_SETTING_COLUMNS, HistoryRecord, TrainHistory, TrainStreams, circle_eval, finetune, finetune_experiment,
    four_setting_experiment, four_setting_rows, four_setting_wiring, label_fraction_sweep, lambda_sweep,
    lambda_task_configs, median_table, oracle_predictor, predict, run_parallel, source_and_target, train_run,
    train_step,
)
from testing_datasets.presets import SWEEP_GRIDS, experiment_preset

SMOKE = experiment_preset("smoke")
SMOKE_GRID = SWEEP_GRIDS["smoke"]

slow = pytest.mark.skipif(not EnvSettings().run_slow, reason="set TEMPOCONT_RUN_SLOW=1 to run trend checks")


@pytest.fixture(scope="module")
def smoke_data():
    return build_dataset(SMOKE.dataset)


def _cfg(lambda_=0.1, **update) -> TrainConfig:
    return SMOKE.train.with_lambda(lambda_).model_copy(update=update)


def _same_params(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_history_schedule(smoke_data):
    _, history = train_run(smoke_data.labeled_set(), smoke_data.unlabeled, smoke_data.val, _cfg())
    assert [r.iteration for r in history.records] == [0, 10, 20, 30]
    assert all(r.validation is not None for r in history.records)
    _, history = train_run(smoke_data.labeled_set(), smoke_data.unlabeled, smoke_data.val, _cfg(iterations=25))
    assert [r.iteration for r in history.records] == [0, 10, 20, 25]


def test_zero_iterations_returns_initial_model(smoke_data):
    cfg = _cfg(iterations=0)
    params, history = train_run(smoke_data.labeled_set(), smoke_data.unlabeled, smoke_data.val, cfg)
    expected = regressor.init(cfg.regressor.model_copy(update={"seed": cfg.init_seed}))
    assert _same_params(params, expected)
    assert len(history) == 1 and history.final.iteration == 0


def test_training_is_deterministic(smoke_data):
    args = (smoke_data.labeled_set(), smoke_data.unlabeled, smoke_data.val, _cfg())
    a, hist_a = train_run(*args)
    b, hist_b = train_run(*args)
    assert _same_params(a, b)
    assert hist_a.to_rows() == hist_b.to_rows()


def test_lambda_zero_ignores_unlabeled_data(smoke_data):
    labeled, val = smoke_data.labeled_set(), smoke_data.val
    with_seqs, _ = train_run(labeled, smoke_data.unlabeled, val, _cfg(0.0))
    without, history = train_run(labeled, [], val, _cfg(0.0))
    assert _same_params(with_seqs, without)
    assert all(r.continuity_loss == 0.0 for r in history.records)

    other_stream, _ = train_run(labeled, smoke_data.unlabeled, val, _cfg(0.0, unlabeled_stream_seed=99))
    assert _same_params(with_seqs, other_stream)


def test_unlabeled_stream_matters_with_lambda(smoke_data):
    labeled, val = smoke_data.labeled_set(), smoke_data.val
    a, _ = train_run(labeled, smoke_data.unlabeled, val, _cfg(0.5))
    b, _ = train_run(labeled, smoke_data.unlabeled, val, _cfg(0.5, unlabeled_stream_seed=99))
    assert not _same_params(a, b)


def test_train_step_from_zero_init():
    features = np.array([[0.3, -0.5, 0.8, 0.1]])
    labels = np.array([[0.0, 1.0]])
    labeled = LabeledSet(features, labels)
    cfg = TrainConfig(regressor=RegressorConfig(input_dim=4, hidden_dims=[5], init_scale=0.0)).with_lambda(0.0)
    params = regressor.init(cfg.regressor)
    state = regressor.init_optimizer(params, cfg.optimizer)
    streams = TrainStreams.from_config(cfg)
    unlabeled_before = streams.unlabeled.bit_generator.state

    new_params, state, record = train_step(params, state, labeled, [], cfg, streams, iteration=1)
    assert record.continuity_loss == 0.0
    assert record.supervised_loss == supervised_loss(predict(params, features), labels)
    assert supervised_loss(predict(new_params, features), labels) < record.supervised_loss
    assert streams.unlabeled.bit_generator.state == unlabeled_before
    assert state.step_count == 1


def test_single_sample_loss_decreases():
    features = np.array([[0.3, -0.5, 0.8, 0.1]])
    labels = np.array([[0.0, 1.0]])
    labeled = LabeledSet(features, labels)
    cfg = TrainConfig(
        iterations=100, eval_every=50, labeled_batch_size=4,
        regressor=RegressorConfig(input_dim=4, hidden_dims=[5]),
        optimizer=OptimizerConfig(learning_rate=1e-2),
    ).with_lambda(0.0)
    initial = regressor.init(cfg.regressor.model_copy(update={"seed": cfg.init_seed}))
    params, history = train_run(labeled, [], [], cfg)
    before = supervised_loss(predict(initial, features), labels)
    after = supervised_loss(predict(params, features), labels)
    assert after < before
    assert after < 0.1 * before
    assert history.final.validation is None
    assert math.isnan(history.final.as_row()["val_mse"])


def test_config_conflicts(smoke_data):
    with pytest.raises(ConfigConflictError):
        train_run(smoke_data.labeled_set(), [], smoke_data.val, _cfg(0.1))
    empty = LabeledSet(np.zeros((0, 6)), np.zeros((0, 2)))
    with pytest.raises(ConfigConflictError):
        train_run(empty, smoke_data.unlabeled, smoke_data.val, _cfg(0.1))
    short = [s.window(0, 2) for s in smoke_data.unlabeled]
    with pytest.raises(ConfigConflictError):
        train_run(smoke_data.labeled_set(), short, smoke_data.val, _cfg(0.1))


def test_continuity_only_run(smoke_data):
    cfg = _cfg(0.5)
    cfg = cfg.model_copy(update={"loss": cfg.loss.model_copy(update={"supervised_weight": 0.0})})
    _, history = train_run(None, smoke_data.unlabeled, smoke_data.val, cfg)
    assert all(r.supervised_loss == 0.0 for r in history.records)


def test_initial_record_on_long_triplet_window():
    data = build_dataset(SMOKE.dataset.model_copy(update={"train_sequences": 1, "val_sequences": 1,
                                                          "sequence_length": 400}))
    cfg = _cfg(0.5, iterations=0, unlabeled_sequence_length=400)
    cfg = cfg.model_copy(update={"loss": cfg.loss.model_copy(update={"variant": "triplet"})})
    _, history = train_run(data.labeled_set(), data.unlabeled, data.val, cfg)
    _, again = train_run(data.labeled_set(), data.unlabeled, data.val, cfg)
    record = history.final
    assert record.iteration == 0
    assert math.isfinite(record.continuity_loss) and record.continuity_loss >= 0.0
    assert history.to_rows() == again.to_rows()


def test_history_rejects_decreasing_iterations():
    history = TrainHistory()
    history.append(HistoryRecord(5, 0.1, 0.0, 0.1, None))
    with pytest.raises(ValueError):
        history.append(HistoryRecord(4, 0.1, 0.0, 0.1, None))


def test_finetune(smoke_data):
    cfg = _cfg()
    pretrained, _ = train_run(smoke_data.labeled_set(), smoke_data.unlabeled, smoke_data.val, cfg)
    same, history = finetune(pretrained, smoke_data.labeled_set(), smoke_data.unlabeled, smoke_data.val,
                             cfg.model_copy(update={"iterations": 0}))
    assert _same_params(same, pretrained)
    assert len(history) == 1

    tuned, _ = finetune(pretrained, smoke_data.labeled_set(), smoke_data.unlabeled, smoke_data.val,
                        cfg.model_copy(update={"iterations": 5}))
    # every layer moves
    assert all(not np.array_equal(a, b) for a, b in zip(pretrained.arrays(), tuned.arrays()))

    wrong = LabeledSet(np.zeros((3, 5)), np.zeros((3, 2)))
    with pytest.raises(ShapeMismatchError):
        finetune(pretrained, wrong, [], [], cfg.with_lambda(0.0))


def test_circle_eval_oracle_and_zero_model():
    domain = make_domain(feature_dim=6, seed=0, noise_std=0.05)
    report, rows = circle_eval(oracle_predictor, domain, radius=5.0, frames=200)
    assert report.accuracy == 1.0
    assert report.mse == pytest.approx(0.0, abs=1e-24)
    assert len(rows) == 200
    assert list(rows[0]) == ["frame", "x", "y", "theta_true", "theta_pred"]
    assert rows[0]["theta_true"] == pytest.approx(math.pi / 2)

    zero = regressor.init(RegressorConfig(input_dim=6, hidden_dims=[4], init_scale=0.0))
    report, rows = circle_eval(zero, domain, frames=50)
    assert report.degenerate == 50
    assert report.accuracy == 0.0
    assert all(math.isnan(r["theta_pred"]) for r in rows)

    with pytest.raises(ShapeMismatchError):
        circle_eval(regressor.init(RegressorConfig(input_dim=5, hidden_dims=[4])), domain)


def test_run_parallel_keeps_order():
    tasks = [-3.0, 1.0, -2.0, 4.0]
    assert run_parallel(abs, tasks, jobs=1) == [3.0, 1.0, 2.0, 4.0]
    assert run_parallel(abs, tasks, jobs=2) == [3.0, 1.0, 2.0, 4.0]


def test_median_table():
    rows = [{"method": "SL", "seed": s, "mse": v} for s, v in enumerate([0.3, 0.1, 0.2])]
    rows += [{"method": "SSL", "seed": s, "mse": v} for s, v in enumerate([0.05, 0.5])]
    table = median_table(rows, ["method"], "mse")
    assert list(table["method"]) == ["SL", "SSL"]
    assert list(table["mse"]) == pytest.approx([0.2, 0.275])


def test_label_fraction_sweep_rows():
    rows = label_fraction_sweep(SMOKE_GRID["fractions"], SMOKE_GRID["seeds"], SMOKE)
    assert len(rows) == 2 * 2 * 2
    assert [(r["fraction"], r["method"], r["seed"]) for r in rows[:4]] == [
        (0.1, "SL", 0), (0.1, "SL", 1), (0.1, "SSL", 0), (0.1, "SSL", 1)
    ]
    assert all(r["final_val_mse"] >= 0.0 for r in rows)
    with pytest.raises(ValueError):
        label_fraction_sweep([0.0], [0], SMOKE)


def test_four_setting_rows():
    results = four_setting_experiment(SMOKE_GRID["seeds"], SMOKE)
    assert [(r.setting, r.seed) for r in results] == [(s, seed) for s in (1, 2, 3, 4) for seed in (0, 1)]
    rows = four_setting_rows(results)
    # finetune_iterations=10, eval_every=10 -> records at 0 and 10
    assert len(rows) == 4 * 2 * 2
    assert list(rows[0]) == FOUR_SETTING_COLUMNS
    # setting 2 trains without labels
    assert all(rec.supervised_loss == 0.0 for r in results if r.setting == 2 for rec in r.history.records)


def test_four_setting_labeled_draws_shared():
    seed = 1
    source, target = source_and_target(SMOKE, seed, SMOKE.four_setting_label_fraction)
    wiring = four_setting_wiring(SMOKE, seed, source, target)
    labeled_1, unlabeled_1, cfg_1 = wiring[1]
    labeled_3, unlabeled_3, cfg_3 = wiring[3]
    assert labeled_1 is labeled_3 and unlabeled_1 == [] and len(unlabeled_3) > 0
    assert (cfg_1.init_seed, cfg_1.labeled_stream_seed) == (cfg_3.init_seed, cfg_3.labeled_stream_seed)
    assert wiring[2][0] is None and wiring[2][2].loss.supervised_weight == 0.0

    # with the continuity weight removed, setting 3 replays setting 1 exactly
    pretrained = regressor.init(cfg_1.regressor.model_copy(update={"seed": cfg_1.init_seed}))
    only_labels, history_1 = finetune(pretrained, labeled_1, unlabeled_1, target.val, cfg_1)
    both, history_3 = finetune(pretrained, labeled_3, unlabeled_3, target.val, cfg_3.with_lambda(0.0))
    assert _same_params(only_labels, both)
    assert history_1.to_rows() == history_3.to_rows()


def test_lambda_task_configs():
    ds_cfg, cfg = lambda_task_configs(SMOKE, 10.0, seed=2)
    assert ds_cfg.label_fraction == SMOKE.lambda_label_fraction
    assert ds_cfg.max_heading_step == SMOKE.lambda_heading_step
    assert cfg.loss.variant == SMOKE.lambda_loss.variant
    assert cfg.loss.alpha == SMOKE.lambda_loss.alpha and cfg.loss.margin == SMOKE.lambda_loss.margin
    assert cfg.loss.lambda_ == 10.0
    assert cfg.unlabeled_sequence_length == min(SMOKE.lambda_window, SMOKE.dataset.sequence_length)
    assert (cfg.init_seed, cfg.labeled_stream_seed, cfg.unlabeled_stream_seed) == (6, 7, 8)
    baseline_ds, baseline = lambda_task_configs(SMOKE, 0.0, seed=2)
    assert baseline_ds == ds_cfg
    assert baseline.loss.lambda_ == 0.0


def test_lambda_sweep_rows():
    rows = lambda_sweep(SMOKE_GRID["lambdas"], SMOKE_GRID["seeds"], SMOKE)
    assert [(r["lambda"], r["seed"]) for r in rows] == [(0.0, 0), (0.0, 1), (0.1, 0), (0.1, 1)]
    assert all(r["seq_output_std"] >= 0.0 for r in rows)
    with pytest.raises(ValueError):
        lambda_sweep([-1.0], [0], SMOKE)


def test_finetune_experiment_rows():
    rows = finetune_experiment(SMOKE_GRID["seeds"], SMOKE)
    assert [(r["method"], r["seed"]) for r in rows] == [
        ("no-finetune", 0), ("no-finetune", 1), ("SL-finetune", 0), ("SL-finetune", 1),
        ("SSL-finetune", 0), ("SSL-finetune", 1),
    ]
    assert all(0.0 <= r["accuracy"] <= 1.0 for r in rows)


# ---- Trend checks at reference scale (slow) ----

REFERENCE = experiment_preset("reference")
REFERENCE_SEEDS = SWEEP_GRIDS["reference"]["seeds"]
JOBS = 4


@slow
def test_label_fraction_trend():
    rows = label_fraction_sweep([0.01, 0.1, 1.0], REFERENCE_SEEDS, REFERENCE, jobs=JOBS)
    assert len(rows) == 30
    med = median_table(rows, ["fraction", "method"], "final_val_mse")
    mse = {(r.fraction, r.method): r.final_val_mse for r in med.itertuples()}
    assert mse[(0.01, "SSL")] < mse[(0.01, "SL")]
    assert mse[(0.1, "SSL")] < mse[(0.1, "SL")]
    assert mse[(1.0, "SSL")] <= 1.1 * mse[(1.0, "SL")]
    assert mse[(1.0, "SL")] <= mse[(0.01, "SL")]


@slow
def test_four_setting_ordering():
    results = four_setting_experiment(REFERENCE_SEEDS, REFERENCE, jobs=JOBS)
    finals = {s: np.median([r.history.final.validation.mse for r in results if r.setting == s]) for s in (1, 2, 3, 4)}
    assert min(finals, key=finals.get) == 3
    initial_2 = np.median([r.history.initial.validation.mse for r in results if r.setting == 2])
    assert finals[2] >= initial_2


@slow
def test_lambda_trend():
    rows = lambda_sweep([0.0, 0.1, 10.0], REFERENCE_SEEDS, REFERENCE, jobs=JOBS)
    spread = median_table(rows, ["lambda"], "seq_output_std").set_index("lambda")["seq_output_std"]
    mse = median_table(rows, ["lambda"], "final_val_mse").set_index("lambda")["final_val_mse"]
    assert spread[10.0] < 0.5 * spread[0.1]
    assert mse.idxmin() == 0.1


@slow
def test_finetune_trend():
    rows = finetune_experiment(REFERENCE_SEEDS, REFERENCE, jobs=JOBS)
    mse = median_table(rows, ["method"], "mse").set_index("method")["mse"]
    angle = median_table(rows, ["method"], "angle_diff").set_index("method")["angle_diff"]
    assert mse["no-finetune"] > mse["SL-finetune"] > mse["SSL-finetune"]
    assert angle["SSL-finetune"] < angle["no-finetune"]


@slow
def test_reference_run_and_circle():
    data = build_dataset(REFERENCE.dataset)
    params, history = train_run(data.labeled_set(), data.unlabeled, data.val, REFERENCE.train)
    assert history.final.validation.accuracy >= 0.9
    domain = make_domain(REFERENCE.dataset.feature_dim, REFERENCE.dataset.domain_seed, REFERENCE.dataset.noise_std)
    report, _ = circle_eval(params, domain, REFERENCE.circle_radius, REFERENCE.circle_frames)
    assert report.mean_angle_diff < math.pi / 8
