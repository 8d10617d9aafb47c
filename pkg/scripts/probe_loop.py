"""Full-loop fidelity probe: trains the desk decoder (cached across runs),
loads a previously trained encoder, and reports pooled velocity correlation
and trajectory RMSE over direction-spanning held-out traces."""

import sys
import time
from pathlib import Path

import numpy as np

from spikeloop.data import DatasetConfig, make_dataset
from spikeloop.decoder import (DecoderConfig, evaluate_decoder, load_decoder,
                               save_decoder, train_decoder)
from spikeloop.encoder import load_encoder
from spikeloop.kinematics import DEFAULT_DECAY, KinematicChain, integrate_trace
from spikeloop.loop import LoopConfig, run_full_loop

ENCODER_PATH = sys.argv[1] if len(sys.argv) > 1 else "/tmp/probe_encoder.jnkw"
DECODER_CACHE = Path("/tmp/probe_decoder.jnkw")

t0 = time.perf_counter()
dataset = make_dataset(DatasetConfig())
print(f"dataset {time.perf_counter() - t0:.1f}s", flush=True)

if DECODER_CACHE.exists():
    decoder = load_decoder(DECODER_CACHE)
    print("decoder loaded from cache", flush=True)
else:
    t0 = time.perf_counter()
    decoder, history = train_decoder(dataset, DecoderConfig())
    save_decoder(decoder, DECODER_CACHE)
    score, _ = evaluate_decoder(decoder, dataset, split="test")
    print(f"decoder {time.perf_counter() - t0:.1f}s test R2 {score.mean:.4f} "
          f"best_epoch {history.best_epoch}", flush=True)

encoder = load_encoder(ENCODER_PATH)
chain = KinematicChain.default()

test_trials = dataset.split("test")
stride = max(1, len(test_trials) // 20)
traces = [t.velocities for t in test_trials[::stride][:20]]
leaders, decodeds, sq_errors = [], [], []
t0 = time.perf_counter()
for i, leader in enumerate(traces):
    config = LoopConfig(decoder=decoder, encoder=encoder, chain=chain, seed=i)
    result = run_full_loop(config, leader)
    leaders.append(leader)
    decodeds.append(result.decoded_velocities)
    ref = integrate_trace(leader, anchor=(220.0, 0.0), decay=DEFAULT_DECAY)
    err = ref - result.trajectory
    sq_errors.append(np.sum(err * err, axis=1))
    rmse_i = float(np.sqrt(np.mean(sq_errors[-1])))
    print(f"trace {i}: rmse {rmse_i:.2f}mm", flush=True)

leader_all = np.concatenate(leaders)
decoded_all = np.concatenate(decodeds)
corr = [float(np.corrcoef(leader_all[:, c], decoded_all[:, c])[0, 1])
        for c in range(2)]
rmse = float(np.sqrt(np.mean(np.concatenate(sq_errors))))
speed_ratio = float(np.linalg.norm(decoded_all) / np.linalg.norm(leader_all))
print(f"loop {time.perf_counter() - t0:.1f}s", flush=True)
print(f"pooled corr {corr[0]:.4f}/{corr[1]:.4f} (floor 0.7) "
      f"rmse {rmse:.3f}mm (ceiling 20.0) speed ratio {speed_ratio:.3f}",
      flush=True)
