# scripts/1_generate_synthetic.py

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from protosurv.cli import ArgumentParser, cmd_synth, load_paths, run_guarded
from protosurv.log import setup_logging


def main():
    paths = load_paths()
    parser = ArgumentParser(description="Generate a synthetic multimodal survival dataset")
    parser.add_argument('--spec', default=paths['synth_spec'],
                        help='Synthetic spec YAML')
    parser.add_argument('--out', default=paths['data_dir'],
                        help='Output directory for dataset.tsv + manifest.yaml')
    parser.add_argument('--seed', type=int, help='Override the spec seed')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING (default: $PROTOSURV_LOG_LEVEL or INFO)')

    args = parser.parse_args()
    logger = setup_logging(args.log_level)

    logger.info(f"📄 Using spec: {args.spec}")
    sys.exit(run_guarded(cmd_synth, args.spec, args.out, seed=args.seed))


if __name__ == "__main__":
    main()
