# scripts/3_evaluate_model.py

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from protosurv.cli import ArgumentParser, cmd_eval, load_paths, run_guarded
from protosurv.log import setup_logging


def main():
    paths = load_paths()
    parser = ArgumentParser(description="Evaluate a checkpoint: C-index, KM curves, log-rank test")
    parser.add_argument('--checkpoint', default=paths['model_dir'], help='Checkpoint directory')
    parser.add_argument('--dataset',
                        help='Dataset to evaluate (default: the checkpoint validation split)')
    parser.add_argument('--out', default=str(Path(paths['results_dir']) / 'eval'),
                        help='Output directory for the evaluation tables and report.md')
    parser.add_argument('--c-index-mode', choices=['harrell', 'literal'], default='harrell',
                        help='Comparable-pair rule for the C-index')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING (default: $PROTOSURV_LOG_LEVEL or INFO)')

    args = parser.parse_args()
    logger = setup_logging(args.log_level)

    dataset = args.dataset or str(Path(args.checkpoint) / 'validation.tsv')
    logger.info(f"🔧 Loading checkpoint: {args.checkpoint}")
    logger.info(f"📁 Evaluating on: {dataset}")
    code = run_guarded(cmd_eval, args.checkpoint, dataset, args.out, c_index_mode=args.c_index_mode)
    if code == 0:
        logger.info(f"📋 View report: {Path(args.out) / 'report.md'}")
    sys.exit(code)


if __name__ == "__main__":
    main()
