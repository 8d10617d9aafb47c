"""End-to-end desk-scale experiment: synthesize the corpus, train both models,
score them, then run the full loop over held-out traces and report fidelity.

Artifacts land under --out (default runs/pipeline): dataset text, both weight
files, loss curves as CSV, and a metrics summary.
"""

import argparse
import csv
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from spikeloop.data import DatasetConfig, make_dataset, save_dataset
from spikeloop.decoder import DecoderConfig, evaluate_decoder, save_decoder, train_decoder
from spikeloop.encoder import EncoderConfig, generate_closed_loop, save_encoder, train_encoder
from spikeloop.kinematics import KinematicChain
from spikeloop.loop import LoopConfig, evaluate_loop, metrics_summary, run_full_loop


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/pipeline")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--decoder-epochs", type=int, default=30)
    parser.add_argument("--encoder-epochs", type=int, default=60)
    parser.add_argument("--loop-traces", type=int, default=20)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.monotonic()

    print("== dataset ==")
    dataset = make_dataset(DatasetConfig(seed=args.seed))
    save_dataset(dataset, out / "dataset.txt")
    mu = dataset.mean_count_per_bin()
    print(f"{len(dataset.trials)} trials, mean count/bin {mu:.3f}")

    print("== decoder ==")
    decoder, dec_hist = train_decoder(
        dataset, DecoderConfig(seed=args.seed, epochs=args.decoder_epochs), log=print)
    save_decoder(decoder, out / "decoder.jnkw")
    score, mse = evaluate_decoder(decoder, dataset, split="test")
    print(f"test R2 {score.per_component.round(4)} mean {score.mean:.4f} mse {mse:.3f}")

    print("== encoder ==")
    encoder, enc_hist = train_encoder(
        dataset, EncoderConfig(seed=args.seed, epochs=args.encoder_epochs), log=print)
    save_encoder(encoder, out / "encoder.jnkw")
    print(f"val CE {enc_hist.final_val_loss:.2f} (uniform {enc_hist.uniform_loss:.2f})")

    with open(out / "loss_curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "decoder_train_mse", "decoder_val_mse",
                        "encoder_train_ce", "encoder_val_ce"])
        rows = max(len(dec_hist.train_loss), len(enc_hist.train_loss))
        for i in range(rows):
            writer.writerow([
                i,
                dec_hist.train_loss[i] if i < len(dec_hist.train_loss) else "",
                dec_hist.val_loss[i] if i < len(dec_hist.val_loss) else "",
                enc_hist.train_loss[i] if i < len(enc_hist.train_loss) else "",
                enc_hist.val_loss[i] if i < len(enc_hist.val_loss) else "",
            ])

    print("== stability ==")
    trace = np.concatenate([t.velocities for t in dataset.split("test")])[:500]
    for seed in range(5):
        counts = generate_closed_loop(encoder, trace, seed=seed)
        per_bin = counts.mean(axis=1)
        frac = np.mean((per_bin >= mu / 3) & (per_bin <= 3 * mu))
        print(f"seed {seed}: mean {per_bin.mean():.3f}, in-band {frac:.3f}")

    print("== full loop ==")
    chain = KinematicChain.default()
    test_trials = dataset.split("test")[:args.loop_traces]
    lines = []
    for i, trial in enumerate(test_trials):
        config = LoopConfig(decoder=decoder, encoder=encoder, chain=chain, seed=i)
        result = run_full_loop(config, trial.velocities)
        metrics = evaluate_loop(trial.velocities, result, reference_rate=mu)
        lines.append(f"trace {i}: corr {metrics.velocity_correlation.round(3)} "
                     f"rmse {metrics.trajectory_rmse_mm:.2f}mm "
                     f"stable {metrics.stable}")
        print(lines[-1])
        if i == 0:
            (out / "loop_metrics.txt").write_text(metrics_summary(metrics))

    print(f"done in {time.monotonic() - started:.0f}s; artifacts in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
