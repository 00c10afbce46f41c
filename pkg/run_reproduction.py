import logging
import sys
import os
import json

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), 'src')))

from cbf_lab import config
from cbf_lab import FIGURES, AcceptanceFailure

# Configure logging
logging.basicConfig(level=config.LOG_LEVEL, format=config.LOG_FORMAT)
# Suppress the font finding logs from matplotlib
logging.getLogger('matplotlib.font_manager').setLevel(logging.WARNING)
logger = logging.getLogger(__name__)


def run_all(out_dir: str = config.OUTPUT_DIR) -> bool:
    """
    Regenerates every figure bundle from the fixtures and writes a combined
    summary next to them. Returns False if any acceptance check failed.
    """
    os.makedirs(out_dir, exist_ok=True)
    summaries = {}
    failures = []

    for name, reproduce in FIGURES.items():
        logger.info(f"Reproducing {name}...")
        try:
            summaries[name] = reproduce(out_dir)
        except AcceptanceFailure as e:
            logger.error(f"{name} failed its acceptance check: {e}")
            failures.append(name)
            continue
        logger.info(f"{name} summary:")
        print(json.dumps(summaries[name], indent=2, default=str))

    output_path = os.path.join(out_dir, "summary.json")
    with open(output_path, 'w') as f:
        json.dump(summaries, f, indent=2, default=str)
    logger.info(f"Saved summary to {output_path}")

    if failures:
        logger.error(f"Failed: {', '.join(failures)}")
        return False
    logger.info("All figures reproduced.")
    return True


if __name__ == "__main__":
    sys.exit(0 if run_all() else 1)
