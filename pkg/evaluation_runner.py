#!/usr/bin/env python3
"""
Evaluation runner for the experiment presets.
Runs every sweep at the selected scale, checks the expected trends and logs the medians.
"""

import json
import logging
import os
import time
from datetime import datetime

from tc_core.trainer import (
    circle_eval, finetune_experiment, four_setting_experiment, four_setting_rows, label_fraction_sweep,
    lambda_sweep, median_table, train_run,
)
from tc_core.synth import build_dataset, make_domain
from testing_datasets.presets import SWEEP_GRIDS, experiment_preset

# Change these to switch the scale / parallelism of the run
CURRENT_PRESET = "reference"  # Preset name from testing_datasets/presets.py
JOBS = 1

# Log file configuration
LOG_FILE = "evaluation_log.txt"
OUTPUT_FILE = "evaluation_outputs.json"


def log_to_file(message: str, append: bool = True):
    """Write message to log file with timestamp."""
    timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
    log_entry = f"[{timestamp}] {message}\n"

    mode = 'a' if append else 'w'
    with open(LOG_FILE, mode, encoding='utf-8') as f:
        f.write(log_entry)


def log_separator():
    """Write separator line to log file."""
    with open(LOG_FILE, 'a', encoding='utf-8') as f:
        f.write("=" * 60 + "\n")


def report(message: str):
    log_to_file(message)
    print(message)


def check_label_fraction(rows) -> bool:
    med = median_table(rows, ["fraction", "method"], "final_val_mse")
    lookup = {(r.fraction, r.method): r.final_val_mse for r in med.itertuples()}
    ok = True
    for fraction in sorted({f for f, _ in lookup}):
        sl, ssl = lookup[(fraction, "SL")], lookup[(fraction, "SSL")]
        report(f"  fraction={fraction}: SL={sl:.4f} SSL={ssl:.4f}")
        ok &= (ssl <= 1.1 * sl) if fraction >= 1.0 else (ssl < sl)
    return ok


def check_four_setting(results) -> bool:
    finals = [{"setting": r.setting, "seed": r.seed, "final": r.history.final.validation.mse,
               "initial": r.history.initial.validation.mse} for r in results]
    final_med = median_table(finals, ["setting"], "final").set_index("setting")["final"]
    initial_med = median_table(finals, ["setting"], "initial").set_index("setting")["initial"]
    for setting in final_med.index:
        report(f"  setting {setting}: initial={initial_med[setting]:.4f} final={final_med[setting]:.4f}")
    return bool(final_med.idxmin() == 3 and final_med[2] >= initial_med[2])


def check_lambda(rows) -> bool:
    mse = median_table(rows, ["lambda"], "final_val_mse").set_index("lambda")["final_val_mse"]
    spread = median_table(rows, ["lambda"], "seq_output_std").set_index("lambda")["seq_output_std"]
    for lam in mse.index:
        report(f"  lambda={lam}: mse={mse[lam]:.4f} seq_output_std={spread[lam]:.4f}")
    return bool(spread[10.0] < 0.5 * spread[0.1] and mse.idxmin() == 0.1)


def check_finetune(rows) -> bool:
    mse = median_table(rows, ["method"], "mse").set_index("method")["mse"]
    for method in mse.index:
        report(f"  {method}: mse={mse[method]:.4f}")
    return bool(mse["no-finetune"] > mse["SL-finetune"] >= mse["SSL-finetune"]
                and mse["SSL-finetune"] < mse["SL-finetune"])


def run_evaluation():
    """Run every experiment preset and record medians and trend checks."""
    exp = experiment_preset(CURRENT_PRESET)
    grid = SWEEP_GRIDS[CURRENT_PRESET]
    seeds = grid["seeds"]

    log_to_file(f"Experiment Evaluation Runner - preset: {CURRENT_PRESET}, seeds: {seeds}, jobs: {JOBS}")
    log_to_file("=" * 50)
    print("Experiment Evaluation Runner")
    print("=" * 50)

    outputs = {"preset": CURRENT_PRESET, "seeds": seeds, "experiments": {}}
    total_start_time = time.time()

    stages = [
        ("label_fraction", lambda: label_fraction_sweep(grid["fractions"], seeds, exp, JOBS), check_label_fraction),
        ("four_setting", lambda: four_setting_experiment(seeds, exp, JOBS), check_four_setting),
        ("lambda", lambda: lambda_sweep(grid["lambdas"], seeds, exp, JOBS), check_lambda),
        ("finetune", lambda: finetune_experiment(seeds, exp, JOBS), check_finetune),
    ]
    for name, run, check in stages:
        stage_start_time = time.time()
        report(f"Stage {name}: running...")
        try:
            result = run()
            passed = check(result)
            rows = four_setting_rows(result) if name == "four_setting" else result
            outputs["experiments"][name] = {"rows": rows, "trend_ok": passed}
            report(f"Stage {name}: trend {'OK' if passed else 'NOT MET'} ({time.time() - stage_start_time:.1f}s)")
        except Exception as e:
            report(f"Stage {name} error: {e}")
            outputs["experiments"][name] = {"error": str(e)}

    # Circle walk with a model trained on the source domain
    data = build_dataset(exp.dataset)
    params, _ = train_run(data.labeled_set(), data.unlabeled, data.val, exp.train)
    domain = make_domain(exp.dataset.feature_dim, exp.dataset.domain_seed, exp.dataset.noise_std)
    circle_report, _ = circle_eval(params, domain, exp.circle_radius, exp.circle_frames)
    report(f"Circle walk: {circle_report.format_line()}")
    outputs["circle"] = {"mse": circle_report.mse, "angle_diff": circle_report.mean_angle_diff,
                         "accuracy": circle_report.accuracy}

    total_time = time.time() - total_start_time
    report(f"Total execution time: {total_time:.2f} seconds")
    with open(OUTPUT_FILE, 'w') as f:
        json.dump(outputs, f, indent=2, default=str)
    log_separator()
    print(f"All outputs saved to '{OUTPUT_FILE}'")
    print(f"Log written to '{LOG_FILE}'")


if __name__ == "__main__":
    logging.basicConfig(level=logging.WARNING)
    if not os.path.exists(LOG_FILE):
        log_to_file("Evaluation log started", append=False)
    run_evaluation()
