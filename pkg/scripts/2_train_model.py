# scripts/2_train_model.py

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from protosurv.cli import ArgumentParser, cmd_train, load_paths, run_guarded
from protosurv.log import setup_logging
from protosurv.trainer import ABLATION_VARIANTS


def main():
    paths = load_paths()
    parser = ArgumentParser(description="Train the encoder and prototype library")
    parser.add_argument('--dataset', default=paths['data_dir'],
                        help='Dataset directory (with dataset.tsv) or dataset file')
    parser.add_argument('--config', default='configs/config.yaml',
                        help='Engine/training config')
    parser.add_argument('--out', default=paths['model_dir'],
                        help='Checkpoint output directory')
    parser.add_argument('--seed', type=int, help='Override training.seed')
    parser.add_argument('--epochs', type=int, help='Override training.epochs')
    parser.add_argument('--folds', type=int,
                        help='Run k seeded 8:2 splits and report mean ± std C-index')
    parser.add_argument('--ablation', choices=['all', *ABLATION_VARIANTS],
                        help='Train an ablation variant, or all of them side by side')
    parser.add_argument('--sweep', metavar='FIELD=V1,V2',
                        help='One run per value of a config field, e.g. ema_decay=0.05,0.1,0.2 or '
                             'alpha_sim/beta_sim/gamma_sim=0.4/0.4/0.2,1/0/0')
    parser.add_argument('--no-progress', action='store_true', help='Hide the epoch progress bar')
    parser.add_argument('--log-level', help='DEBUG, INFO, WARNING (default: $PROTOSURV_LOG_LEVEL or INFO)')

    args = parser.parse_args()
    if sum(x is not None for x in (args.folds, args.ablation, args.sweep)) > 1:
        parser.error("--folds, --ablation and --sweep cannot be combined")
    logger = setup_logging(args.log_level)

    logger.info(f"📂 Using dataset: {args.dataset}")
    logger.info(f"📄 Using config: {args.config}")
    logger.info("🚀 Starting training...")
    code = run_guarded(cmd_train, args.dataset, args.config, args.out, seed=args.seed, folds=args.folds,
                       ablation=args.ablation, epochs=args.epochs, progress=not args.no_progress,
                       sweep=args.sweep)
    if code == 0:
        logger.info(f"✅ Training complete! Outputs in {args.out}")
    sys.exit(code)


if __name__ == "__main__":
    main()
