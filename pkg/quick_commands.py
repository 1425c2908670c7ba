# quick_commands.py

import subprocess
import sys
from pathlib import Path


def run_cmd(cmd):
    """Execute command and show output"""
    result = subprocess.run(cmd, shell=True)
    return result.returncode == 0


def main():
    if len(sys.argv) < 2:
        print("""
Quick Commands for the ProtoSurv pipeline:

python quick_commands.py synth [--seed N]                 # Generate synthetic dataset
python quick_commands.py train [--epochs N]               # Train checkpoint
python quick_commands.py folds [k]                        # k-fold (8:2) C-index table
python quick_commands.py ablate [variant|all]             # Ablation runs
python quick_commands.py sweep FIELD=V1,V2                # One run per config value
python quick_commands.py eval                             # Evaluate checkpoint
python quick_commands.py explain <samples.tsv>            # Explanation traces
python quick_commands.py export                           # Prototype table
python quick_commands.py pipeline                         # Full pipeline
python quick_commands.py test                             # Fast test suite
python quick_commands.py status                           # Check status

Examples:
  python quick_commands.py synth --seed 7
  python quick_commands.py folds 5
  python quick_commands.py ablate no_wandering
  python quick_commands.py sweep ema_decay=0.05,0.1,0.2
  python quick_commands.py explain models/latest/validation.tsv
        """)
        return

    cmd = sys.argv[1]
    args = sys.argv[2:]

    if cmd == "synth":
        base_cmd = "python scripts/1_generate_synthetic.py"
        if "--seed" in args:
            idx = args.index("--seed")
            base_cmd += f" --seed {args[idx+1]}"
        run_cmd(base_cmd)

    elif cmd == "train":
        base_cmd = "python scripts/2_train_model.py"
        if "--epochs" in args:
            idx = args.index("--epochs")
            base_cmd += f" --epochs {args[idx+1]}"
        run_cmd(base_cmd)

    elif cmd == "folds":
        k = args[0] if args else "5"
        run_cmd(f"python scripts/2_train_model.py --folds {k} --out models/folds")

    elif cmd == "ablate":
        variant = args[0] if args else "all"
        run_cmd(f"python scripts/2_train_model.py --ablation {variant} --out models/ablation_{variant}")

    elif cmd == "sweep":
        if args:
            run_cmd(f"python scripts/2_train_model.py --sweep {args[0]} --out models/sweep")
        else:
            print("❌ Provide a sweep: python quick_commands.py sweep ema_decay=0.05,0.1,0.2")

    elif cmd == "eval":
        run_cmd("python scripts/3_evaluate_model.py")

    elif cmd == "explain":
        if args:
            run_cmd(f"python scripts/4_explain_predictions.py --samples {args[0]}")
        else:
            print("❌ Provide a sample file: python quick_commands.py explain <samples.tsv>")

    elif cmd == "export":
        run_cmd("python scripts/5_export_prototypes.py")

    elif cmd == "pipeline":
        run_cmd("python scripts/pipeline.py")

    elif cmd == "test":
        run_cmd("python -m pytest -m 'not slow'")

    elif cmd == "status":
        print("📊 Pipeline Status:")

        datasets = list(Path("data").rglob("dataset.tsv"))
        print(f"Datasets: {len(datasets)} found")

        checkpoints = [p.parent for p in Path("models").rglob("library.txt")]
        print(f"Checkpoints: {len(checkpoints)} trained")

        reports = list(Path("results").rglob("report.md"))
        print(f"Evaluation reports: {len(reports)}")

        if checkpoints:
            latest = max(checkpoints, key=lambda p: (p / "library.txt").stat().st_mtime)
            has_split = (latest / "validation.tsv").exists()
            print(f"Latest checkpoint: {latest}")
            print(f"Validation split saved: {'✅' if has_split else '❌'}")

    else:
        print(f"❌ Unknown command: {cmd}")


if __name__ == "__main__":
    main()
