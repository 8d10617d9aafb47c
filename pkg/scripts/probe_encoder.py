"""Desk-scale encoder training probe: CE vs the acceptance bound, generation
stability, and rate tracking. Not part of the test suite."""

import time

import numpy as np

from spikeloop.data import BIN_S, DatasetConfig, dataset_tuning, make_dataset
from spikeloop.encoder import EncoderConfig, generate_closed_loop, save_encoder, train_encoder

t0 = time.monotonic()
data = make_dataset(DatasetConfig())
print(f"dataset {time.monotonic() - t0:.1f}s mean_count {data.mean_count_per_bin():.3f}",
      flush=True)

cfg = EncoderConfig()
model, hist = train_encoder(data, cfg, log=lambda m: print(m, flush=True))
print(f"train {hist.seconds:.1f}s best_epoch={hist.best_epoch} "
      f"final_val {hist.final_val_loss:.2f} bound {0.75 * hist.uniform_loss:.2f}",
      flush=True)
save_encoder(model, "/tmp/probe_encoder.jnkw")

# stability: 500-bin trace stitched from held-out test traces
test_trials = data.split("test")
trace = np.concatenate([t.velocities for t in test_trials])[:500]
mu = data.mean_count_per_bin()
for seed in range(5):
    t1 = time.monotonic()
    counts = generate_closed_loop(model, trace, seed=seed)
    per_bin = counts.mean(axis=1)
    ok = np.mean((per_bin >= mu / 3) & (per_bin <= 3 * mu))
    print(f"seed {seed}: gen {time.monotonic() - t1:.1f}s "
          f"mean {per_bin.mean():.3f} (train {mu:.3f}) in-band {ok:.3f}", flush=True)

# rate tracking: teacher-forced expected counts vs oracle rates on test trials
from spikeloop.encoder import _embed_batch, _forward_tokens, _gather_batch, _sample_index
from spikeloop.nn import softmax

tuning = dataset_tuning(DatasetConfig())
sel = test_trials[:8]
index = _sample_index(sel)
exp_all, rate_all = [], []
for lo in range(0, len(index), 256):
    picks = range(lo, min(lo + 256, len(index)))
    counts_b, vels_b, _ = _gather_batch(sel, index, picks, cfg)
    tokens = _embed_batch(model, counts_b, vels_b)
    logits, _ = _forward_tokens(model, tokens, training=False)
    probs = softmax(logits, axis=-1)
    exp_all.append(probs @ np.arange(9.0))
    for p in picks:
        ti, t = index[p]
        rate_all.append(tuning.rates_hz(sel[ti].velocities[t]) * BIN_S)
exp = np.concatenate(exp_all)
rate = np.array(rate_all)
cors = [np.corrcoef(exp[:, n], rate[:, n])[0, 1] for n in range(exp.shape[1])]
print(f"rate tracking: mean corr {np.nanmean(cors):.3f} "
      f"min {np.nanmin(cors):.3f} frac>0.5 {np.mean(np.array(cors) > 0.5):.3f}",
      flush=True)
print(f"total {time.monotonic() - t0:.1f}s", flush=True)
