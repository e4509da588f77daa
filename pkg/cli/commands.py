"""
Command registry and handlers.

COMMANDS describes every command and its options (flag, config key, type, default);
cli.main turns it into an argparse parser. Option values are resolved as
flag > --config file > default, then handed to execute_command.
"""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import config
from tc_core.angular import decode_many, evaluate
from tc_core.errors import ConfigConflictError
from tc_core.geometry import actor_pose, load_camera
from tc_core.models import DatasetConfig, ExperimentConfig, LossConfig, OptimizerConfig, RegressorConfig, TrainConfig
from tc_core.regressor import check_compatible, load_checkpoint, save_checkpoint
from tc_core.synth import apply_domain_shift, build_dataset, collect_labeled, load_dataset, make_domain, save_dataset, stack_sequences
from tc_core.trainer import (
    CIRCLE_COLUMNS, FINETUNE_COLUMNS, FOUR_SETTING_COLUMNS, HISTORY_COLUMNS, LABEL_FRACTION_COLUMNS, LAMBDA_COLUMNS,
    check_run_inputs, circle_eval, finetune, finetune_experiment, four_setting_experiment, four_setting_rows,
    label_fraction_sweep, lambda_sweep, oracle_predictor, predict, train_run,
)
from utils.formatting import format_float, write_table

logger = logging.getLogger(__name__)


def _opt(flag: str, type_: str, default: Any = None, help: str = "", **extra) -> Dict[str, Any]:
    return {"flag": flag, "key": flag.lstrip("-").replace("-", "_"), "type": type_,
            "default": default, "help": help, **extra}


DATASET_OPTIONS = [
    _opt("--sequences", "int", config.TRAIN_SEQUENCES, "training sequences"),
    _opt("--val-sequences", "int", config.VAL_SEQUENCES, "validation sequences"),
    _opt("--length", "int", config.SEQUENCE_LENGTH, "frames per sequence"),
    _opt("--feature-dim", "int", config.FEATURE_DIM, "feature vector size"),
    _opt("--noise-std", "float", config.NOISE_STD, "feature noise (source domain)"),
    _opt("--domain-seed", "int", 0, "seed of the source feature domain"),
]


def _train_options(iterations: int) -> List[Dict[str, Any]]:
    return [
        _opt("--iterations", "int", iterations, "optimisation steps"),
        _opt("--batch-size", "int", config.LABELED_BATCH_SIZE, "labeled batch size"),
        _opt("--window", "int", config.UNLABELED_SEQUENCE_LENGTH, "unlabeled frames per step"),
        _opt("--eval-every", "int", config.EVAL_EVERY, "iterations between validation records"),
        _opt("--lambda", "float", config.LAMBDA, "continuity loss weight"),
        _opt("--alpha", "float", config.ALPHA, "similarity decay per frame (pairwise)"),
        _opt("--margin", "float", config.MARGIN, "hinge margin (pairwise)"),
        _opt("--variant", "str", config.VARIANT, "continuity loss variant", choices=["pairwise", "triplet"]),
        _opt("--triplets", "int", config.TRIPLETS_PER_SEQUENCE, "triplets sampled per window"),
        _opt("--near-window", "int", config.TRIPLET_NEAR_WINDOW, "max frame gap of the near sample"),
        _opt("--lr", "float", config.LEARNING_RATE, "Adam learning rate"),
        _opt("--hidden", "int_list", list(config.HIDDEN_DIMS), "hidden layer sizes, comma separated"),
        _opt("--activation", "str", config.ACTIVATION, "hidden activation", choices=["tanh", "relu"]),
        _opt("--init-scale", "float", config.INIT_SCALE, "weight init scale"),
        _opt("--seed", "int", None, "run seed (default: TEMPOCONT_SEED or 0)"),
    ]


COMMANDS: List[Dict[str, Any]] = [
    {
        "name": "gen-data",
        "description": "Generate a synthetic sequential heading dataset.",
        "parameters": [
            _opt("--out", "path", help="dataset file to write", required=True),
            *DATASET_OPTIONS,
            _opt("--label-fraction", "float", 1.0, "fraction of training frames with exposed labels"),
            _opt("--max-heading-step", "float", config.MAX_HEADING_STEP, "random walk heading step bound (rad)"),
            _opt("--label-source", "str", "truth", "where exposed labels come from", choices=["truth", "motion"]),
            _opt("--motion-window", "int", 2, "differencing window of motion labels"),
            _opt("--seed", "int", None, "dataset seed (default: TEMPOCONT_SEED or 0)"),
            _opt("--shift-seed", "int", None, "also write a shifted-domain copy <stem>.shifted<suffix>"),
            _opt("--shift-strength", "float", config.SHIFT_STRENGTH, "size of the domain shift in [0, 1]"),
        ],
    },
    {
        "name": "train",
        "description": "Train a regressor from scratch and write a checkpoint plus history CSV.",
        "parameters": [
            _opt("--data", "path", help="dataset file", required=True),
            _opt("--out", "path", help="checkpoint to write", required=True),
            _opt("--history", "path", help="history CSV (default: <out stem>.history.csv)"),
            *_train_options(config.TRAIN_ITERATIONS),
        ],
    },
    {
        "name": "finetune",
        "description": "Fine-tune a checkpoint on another dataset.",
        "parameters": [
            _opt("--checkpoint", "path", help="pretrained checkpoint", required=True),
            _opt("--data", "path", help="dataset file of the new domain", required=True),
            _opt("--out", "path", help="checkpoint to write", required=True),
            _opt("--history", "path", help="history CSV (default: <out stem>.history.csv)"),
            *_train_options(config.FINETUNE_ITERATIONS),
        ],
    },
    {
        "name": "eval",
        "description": "Print mse/angle_diff/accuracy of a checkpoint; optionally run the circle walk.",
        "parameters": [
            _opt("--checkpoint", "path", help="checkpoint to evaluate"),
            _opt("--oracle", "bool", False, "use the ground-truth encoder instead of a checkpoint"),
            _opt("--data", "path", help="dataset file"),
            _opt("--set", "str", "val", "which split to score", choices=["train", "val"]),
            _opt("--circle", "path", help="write the two-revolution circle table here"),
            _opt("--circle-frames", "int", 200, "frames of the circle walk"),
            _opt("--circle-radius", "float", 5.0, "circle radius (m)"),
            _opt("--feature-dim", "int", config.FEATURE_DIM, "feature size when no checkpoint is given"),
            _opt("--noise-std", "float", config.NOISE_STD, "feature noise of the circle domain"),
            _opt("--domain-seed", "int", 0, "seed of the circle feature domain"),
            _opt("--shift-seed", "int", None, "render the circle in the shifted domain"),
            _opt("--shift-strength", "float", config.SHIFT_STRENGTH, "size of the domain shift in [0, 1]"),
            _opt("--seed", "int", None, "noise seed of the circle walk"),
        ],
    },
    {
        "name": "sweep",
        "description": "Run an experiment preset and write its results CSV.",
        "parameters": [
            _opt("--preset", "str", help="experiment", required=True,
                 choices=["label-fraction", "four-setting", "lambda", "finetune"]),
            _opt("--out", "path", help="results CSV", required=True),
            _opt("--seeds", "int_list", list(config.SWEEP_SEEDS), "run seeds"),
            _opt("--fractions", "float_list", list(config.SWEEP_FRACTIONS), "label fractions (label-fraction)"),
            _opt("--lambdas", "float_list", list(config.SWEEP_LAMBDAS), "lambda values (lambda)"),
            _opt("--ssl-lambda", "float", config.LAMBDA, "lambda of the SSL runs"),
            _opt("--finetune-iterations", "int", config.FINETUNE_ITERATIONS, "fine-tuning steps"),
            _opt("--shift-seed", "int", 1, "domain shift seed"),
            _opt("--shift-strength", "float", config.SHIFT_STRENGTH, "size of the domain shift in [0, 1]"),
            _opt("--data-seed", "int", 0, "base dataset seed"),
            _opt("--jobs", "int", 1, "worker processes"),
            *DATASET_OPTIONS,
            *[o for o in _train_options(config.TRAIN_ITERATIONS) if o["key"] not in ("lambda", "seed")],
        ],
    },
    {
        "name": "raycast",
        "description": "Recover an actor's ground position and world heading from a bounding box.",
        "parameters": [
            _opt("--camera", "path", help="camera key=value file", required=True),
            _opt("--bbox", "float_list", help="u_min,v_min,u_max,v_max", required=True),
            _opt("--theta-img", "float", help="image-plane heading (rad)", required=True),
        ],
    },
]


def command_spec(name: str) -> Dict[str, Any]:
    for cmd in COMMANDS:
        if cmd["name"] == name:
            return cmd
    raise ValueError(f"unknown command {name!r}")


# ---- Option resolution ----

def _to_list(value, item: Callable) -> list:
    if isinstance(value, (list, tuple)):
        return [item(v) for v in value]
    return [item(v) for v in str(value).split(",") if v.strip()]


CONVERTERS: Dict[str, Callable[[Any], Any]] = {
    "int": int,
    "float": float,
    "str": str,
    "path": str,
    "bool": lambda v: v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes"),
    "int_list": lambda v: _to_list(v, int),
    "float_list": lambda v: _to_list(v, float),
}


def resolve_options(name: str, flags: Dict[str, Any], file_config: Optional[Dict[str, str]] = None) -> Dict[str, Any]:
    """
    Merge flag values (None = not given), config file values and defaults.

    Raises:
        ConfigConflictError for a missing required option
        ValueError for values that do not convert
    """
    file_config = file_config or {}
    resolved = {}
    for opt in command_spec(name)["parameters"]:
        key = opt["key"]
        value = flags.get(key)
        if value is None and file_config.get(key, "") != "":
            value = file_config[key]
        if value is None:
            if opt.get("required"):
                raise ConfigConflictError(f"{name}: missing required option {opt['flag']}")
            value = opt["default"]
        if value is not None:
            try:
                value = CONVERTERS[opt["type"]](value)
            except ValueError as e:
                raise ValueError(f"{name}: bad value for {opt['flag']}: {value!r} ({e})") from e
            if "choices" in opt and value not in opt["choices"]:
                raise ConfigConflictError(f"{name}: {opt['flag']} must be one of {opt['choices']}, got {value!r}")
        resolved[key] = value
    if "seed" in resolved and resolved["seed"] is None:
        resolved["seed"] = config.EnvSettings().seed
    return resolved


def options_to_strings(options: Dict[str, Any]) -> Dict[str, str]:
    """Manifest form of resolved options; resolve_options accepts it back."""
    out = {}
    for key, value in options.items():
        if value is None:
            out[key] = ""
        elif isinstance(value, bool):
            out[key] = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            out[key] = ",".join(format_float(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            out[key] = format_float(value)
        else:
            out[key] = str(value)
    return out


# ---- Handlers ----

def _display(value: float) -> str:
    # x + 0.0 turns -0.0 into 0.0
    return format_float(value + 0.0)


def _history_path(o: Dict[str, Any]) -> str:
    if o.get("history"):
        return o["history"]
    out = Path(o["out"])
    return str(out.with_name(f"{out.stem}.history.csv"))


def _train_config(o: Dict[str, Any], regressor_cfg: RegressorConfig) -> TrainConfig:
    loss = LossConfig(
        lambda_=o["lambda"], alpha=o["alpha"], margin=o["margin"], variant=o["variant"],
        triplet_samples_per_sequence=o["triplets"], near_window=o["near_window"],
    )
    cfg = TrainConfig(
        iterations=o["iterations"],
        labeled_batch_size=o["batch_size"],
        unlabeled_sequence_length=o["window"],
        eval_every=o["eval_every"],
        loss=loss,
        optimizer=OptimizerConfig(learning_rate=o["lr"]),
        regressor=regressor_cfg,
    )
    return cfg.with_seeds(o["seed"])


def _regressor_config(o: Dict[str, Any], input_dim: int) -> RegressorConfig:
    return RegressorConfig(input_dim=input_dim, hidden_dims=o["hidden"], activation=o["activation"],
                           init_scale=o["init_scale"])


def cmd_gen_data(o: Dict[str, Any]) -> Dict[str, Any]:
    ds_cfg = DatasetConfig(
        train_sequences=o["sequences"], val_sequences=o["val_sequences"], sequence_length=o["length"],
        label_fraction=o["label_fraction"], feature_dim=o["feature_dim"], noise_std=o["noise_std"],
        max_heading_step=o["max_heading_step"], label_source=o["label_source"], motion_window=o["motion_window"],
        domain_seed=o["domain_seed"], seed=o["seed"],
    )
    domain = make_domain(ds_cfg.feature_dim, ds_cfg.domain_seed, ds_cfg.noise_std)
    save_dataset(o["out"], build_dataset(ds_cfg, domain))
    outputs = [o["out"]]
    seeds = {"seed": o["seed"], "domain_seed": o["domain_seed"]}

    if o["shift_seed"] is not None:
        # Same trajectories rendered in the shifted domain
        shifted = apply_domain_shift(domain, o["shift_seed"], o["shift_strength"])
        out = Path(o["out"])
        shifted_path = str(out.with_name(f"{out.stem}.shifted{out.suffix}"))
        save_dataset(shifted_path, build_dataset(ds_cfg, shifted))
        outputs.append(shifted_path)
        seeds["shift_seed"] = o["shift_seed"]
    return {"outputs": outputs, "inputs": [], "seeds": seeds, "stdout": []}


def _fit(o: Dict[str, Any], pretrained=None) -> Dict[str, Any]:
    data = load_dataset(o["data"])
    labeled = data.labeled_set()
    if pretrained is None:
        reg_cfg = _regressor_config(o, data.feature_dim)
    else:
        reg_cfg = pretrained.config
        check_compatible(pretrained, data.feature_dim)
    cfg = _train_config(o, reg_cfg)
    check_run_inputs(labeled, data.unlabeled, cfg)

    if pretrained is None:
        params, history = train_run(labeled, data.unlabeled, data.val, cfg)
    else:
        params, history = finetune(pretrained, labeled, data.unlabeled, data.val, cfg)

    save_checkpoint(o["out"], params)
    history_path = _history_path(o)
    write_table(history_path, history.to_rows(), HISTORY_COLUMNS)
    seeds = {"init_seed": cfg.init_seed, "labeled_stream_seed": cfg.labeled_stream_seed,
             "unlabeled_stream_seed": cfg.unlabeled_stream_seed}
    inputs = [o["data"]] + ([o["checkpoint"]] if pretrained is not None else [])
    return {"outputs": [o["out"], history_path], "inputs": inputs, "seeds": seeds, "stdout": []}


def cmd_train(o: Dict[str, Any]) -> Dict[str, Any]:
    return _fit(o)


def cmd_finetune(o: Dict[str, Any]) -> Dict[str, Any]:
    return _fit(o, pretrained=load_checkpoint(o["checkpoint"]))


def cmd_eval(o: Dict[str, Any]) -> Dict[str, Any]:
    if not o["oracle"] and not o["checkpoint"]:
        raise ConfigConflictError("eval: give --checkpoint or --oracle")
    if not o["data"] and not o["circle"]:
        raise ConfigConflictError("eval: give --data and/or --circle")
    params = None if o["oracle"] else load_checkpoint(o["checkpoint"])
    inputs = [] if params is None else [o["checkpoint"]]
    outputs, stdout = [], []

    if o["data"]:
        data = load_dataset(o["data"])
        inputs.append(o["data"])
        if o["set"] == "train":
            labeled = collect_labeled(data.train, data.feature_dim)
            features, labels = labeled.features, labeled.labels
        else:
            features, labels = stack_sequences(data.val, data.feature_dim)
        if params is None:
            preds = oracle_predictor(features, decode_many(labels))
        else:
            check_compatible(params, data.feature_dim)
            preds = predict(params, features)
        stdout.append(evaluate(preds, labels, strict=False).format_line())

    if o["circle"]:
        dim = o["feature_dim"] if params is None else params.input_dim
        domain = make_domain(dim, o["domain_seed"], o["noise_std"])
        if o["shift_seed"] is not None:
            domain = apply_domain_shift(domain, o["shift_seed"], o["shift_strength"])
        predictor = oracle_predictor if params is None else params
        report, rows = circle_eval(predictor, domain, o["circle_radius"], o["circle_frames"], seed=o["seed"])
        write_table(o["circle"], rows, CIRCLE_COLUMNS)
        outputs.append(o["circle"])
        stdout.append(report.format_line())

    return {"outputs": outputs, "inputs": inputs, "seeds": {"seed": o["seed"]}, "stdout": stdout}


def experiment_config(o: Dict[str, Any]) -> ExperimentConfig:
    dataset = DatasetConfig(
        train_sequences=o["sequences"], val_sequences=o["val_sequences"], sequence_length=o["length"],
        feature_dim=o["feature_dim"], noise_std=o["noise_std"], domain_seed=o["domain_seed"], seed=o["data_seed"],
    )
    train = _train_config({**o, "lambda": o["ssl_lambda"], "seed": 0}, _regressor_config(o, o["feature_dim"]))
    return ExperimentConfig(
        dataset=dataset,
        train=train,
        finetune_iterations=o["finetune_iterations"],
        finetune_label_fraction=config.FINETUNE_LABELS_PER_SEQUENCE / o["length"],
        shift_seed=o["shift_seed"],
        shift_strength=o["shift_strength"],
        ssl_lambda=o["ssl_lambda"],
    )


def cmd_sweep(o: Dict[str, Any]) -> Dict[str, Any]:
    exp = experiment_config(o)
    seeds, jobs, preset = o["seeds"], o["jobs"], o["preset"]
    if not seeds:
        raise ConfigConflictError("sweep: --seeds is empty")
    logger.info(f"Running sweep preset {preset} over seeds {seeds} with {jobs} job(s)")

    if preset == "label-fraction":
        rows, columns = label_fraction_sweep(o["fractions"], seeds, exp, jobs), LABEL_FRACTION_COLUMNS
    elif preset == "four-setting":
        rows, columns = four_setting_rows(four_setting_experiment(seeds, exp, jobs)), FOUR_SETTING_COLUMNS
    elif preset == "lambda":
        rows, columns = lambda_sweep(o["lambdas"], seeds, exp, jobs), LAMBDA_COLUMNS
    else:
        rows, columns = finetune_experiment(seeds, exp, jobs), FINETUNE_COLUMNS

    write_table(o["out"], rows, columns)
    return {"outputs": [o["out"]], "inputs": [], "seeds": {f"seed_{i}": s for i, s in enumerate(seeds)},
            "stdout": []}


def cmd_raycast(o: Dict[str, Any]) -> Dict[str, Any]:
    if len(o["bbox"]) != 4:
        raise ConfigConflictError(f"raycast: --bbox needs 4 values, got {len(o['bbox'])}")
    pose = actor_pose(load_camera(o["camera"]), o["bbox"], o["theta_img"])
    line = f"x={_display(pose.x)} y={_display(pose.y)} theta_w={_display(pose.theta_w)}"
    return {"outputs": [], "inputs": [o["camera"]], "seeds": {}, "stdout": [line]}


HANDLERS: Dict[str, Callable[[Dict[str, Any]], Dict[str, Any]]] = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "raycast": cmd_raycast,
}


def execute_command(name: str, options: Dict[str, Any]) -> Dict[str, Any]:
    """
    Run a named command with resolved options.
    Returns a dict with outputs, inputs, seeds and the lines to print.
    """
    if name not in HANDLERS:
        raise ValueError(f"unknown command {name!r}")
    return HANDLERS[name](options)
