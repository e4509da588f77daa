#!/usr/bin/env python3
"""
Reference pilot run: trains the default configuration with every label exposed and
prints the validation and circle-walk metrics that the slow tests assert against.
"""

import logging
import sys
from pathlib import Path

# Add the project root to the Python path
project_root = Path(__file__).resolve().parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from tc_core.synth import build_dataset, make_domain
from tc_core.trainer import circle_eval, train_run
from testing_datasets.presets import experiment_preset


def main(preset: str = "reference"):
    exp = experiment_preset(preset)
    print(f"Pilot run with preset '{preset}': {exp.train.iterations} iterations, "
          f"{exp.dataset.train_sequences} x {exp.dataset.sequence_length} frames")

    data = build_dataset(exp.dataset)
    params, history = train_run(data.labeled_set(), data.unlabeled, data.val, exp.train)
    final = history.final.validation
    print(f"Final validation: {final.format_line()}")

    domain = make_domain(exp.dataset.feature_dim, exp.dataset.domain_seed, exp.dataset.noise_std)
    report, _ = circle_eval(params, domain, exp.circle_radius, exp.circle_frames)
    print(f"Circle walk:      {report.format_line()}")


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO)
    main(sys.argv[1] if len(sys.argv) > 1 else "reference")
