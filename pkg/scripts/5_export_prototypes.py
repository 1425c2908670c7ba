# scripts/5_export_prototypes.py

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from protosurv.cli import ArgumentParser, cmd_export, load_paths, run_guarded
from protosurv.log import setup_logging


def main():
    paths = load_paths()
    parser = ArgumentParser(description="Export prototype vectors with identity and provenance")
    parser.add_argument('--checkpoint', default=paths['model_dir'], help='Checkpoint directory')
    parser.add_argument('--out', default=str(Path(paths['results_dir']) / 'prototypes'),
                        help='Output directory for prototypes.tsv')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING (default: $PROTOSURV_LOG_LEVEL or INFO)')

    args = parser.parse_args()
    setup_logging(args.log_level)
    sys.exit(run_guarded(cmd_export, args.checkpoint, args.out))


if __name__ == "__main__":
    main()
