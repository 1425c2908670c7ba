# scripts/pipeline.py

import subprocess
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from protosurv.cli import ArgumentParser, load_paths
from protosurv.log import setup_logging

logger = setup_logging()


def run_command(cmd, description):
    """Run one step script; False when it exits nonzero"""
    logger.info(f"🔄 {description}")
    logger.info(f"Running: {' '.join(cmd)}")

    result = subprocess.run(cmd, capture_output=True, text=True)

    if result.returncode != 0:
        logger.error(f"❌ Failed ({result.returncode}): {description}")
        logger.error(f"Error: {result.stderr}")
        return False

    logger.info(f"✅ Completed: {description}")
    return True


def check_prerequisites(args):
    """Check the config and synthetic spec exist"""
    missing = [p for p in (args.config, args.spec) if not Path(p).exists()]
    if missing:
        logger.error("❌ Missing required files:")
        for item in missing:
            logger.error(f"  - {item}")
        return False
    return True


def run_full_pipeline(args):
    """synthesize -> train -> evaluate -> export"""
    if not check_prerequisites(args):
        return False

    python = sys.executable
    results = Path(args.results)

    synth_cmd = [python, "scripts/1_generate_synthetic.py", "--spec", args.spec, "--out", args.data]
    if args.seed is not None:
        synth_cmd.extend(["--seed", str(args.seed)])
    if not args.skip_synth and not run_command(synth_cmd, "Generating synthetic dataset"):
        return False

    train_cmd = [python, "scripts/2_train_model.py", "--dataset", args.data, "--config", args.config,
                 "--out", args.model, "--no-progress"]
    if args.seed is not None:
        train_cmd.extend(["--seed", str(args.seed)])
    if args.epochs is not None:
        train_cmd.extend(["--epochs", str(args.epochs)])
    if not run_command(train_cmd, "Training encoder and prototype library"):
        return False

    eval_cmd = [python, "scripts/3_evaluate_model.py", "--checkpoint", args.model,
                "--out", str(results / "eval")]
    if not run_command(eval_cmd, "Evaluating on the validation split"):
        return False

    export_cmd = [python, "scripts/5_export_prototypes.py", "--checkpoint", args.model,
                  "--out", str(results / "prototypes")]
    if not run_command(export_cmd, "Exporting prototype table"):
        return False

    logger.info("🎉 Pipeline complete!")
    logger.info(f"📁 Checkpoint: {args.model}")
    logger.info(f"📋 Report: {results / 'eval' / 'report.md'}")
    return True


def main():
    paths = load_paths()
    parser = ArgumentParser(description='ProtoSurv synthetic pipeline')
    parser.add_argument('--spec', default=paths['synth_spec'], help='Synthetic spec YAML')
    parser.add_argument('--config', default='configs/config.yaml', help='Engine/training config')
    parser.add_argument('--data', default=paths['data_dir'], help='Dataset directory')
    parser.add_argument('--model', default=paths['model_dir'], help='Checkpoint directory')
    parser.add_argument('--results', default=paths['results_dir'], help='Results directory')
    parser.add_argument('--seed', type=int, help='Seed for both generation and training')
    parser.add_argument('--epochs', type=int, help='Override training.epochs')
    parser.add_argument('--skip-synth', action='store_true',
                        help='Reuse the existing dataset instead of regenerating it')

    args = parser.parse_args()

    if run_full_pipeline(args):
        logger.info("✅ Pipeline completed successfully!")
    else:
        logger.error("❌ Pipeline failed. Check errors above.")
        sys.exit(1)


if __name__ == "__main__":
    main()
