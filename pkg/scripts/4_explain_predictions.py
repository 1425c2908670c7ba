# scripts/4_explain_predictions.py

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from protosurv.cli import ArgumentParser, cmd_explain, load_paths, run_guarded
from protosurv.log import setup_logging


def main():
    paths = load_paths()
    parser = ArgumentParser(description="Write one explanation trace per sample")
    parser.add_argument('--checkpoint', default=paths['model_dir'], help='Checkpoint directory')
    parser.add_argument('--samples', required=True, help='Dataset file with the samples to explain')
    parser.add_argument('--out', default=str(Path(paths['results_dir']) / 'explain'),
                        help='Output directory for explanations.jsonl')
    parser.add_argument('--top-f', type=int, help='Source samples to cite per nearest prototype')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING (default: $PROTOSURV_LOG_LEVEL or INFO)')

    args = parser.parse_args()
    setup_logging(args.log_level)
    sys.exit(run_guarded(cmd_explain, args.checkpoint, args.samples, args.out, top_f=args.top_f))


if __name__ == "__main__":
    main()
