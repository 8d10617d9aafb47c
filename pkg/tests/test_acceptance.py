"""Acceptance gate: one test per promised property, each printing a
PASSED/FAILED line in the terminal summary. Desk-scale models come from the
session fixtures, so the expensive training happens once."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from spikeloop.data import BIN_S, DatasetConfig, dataset_tuning
from spikeloop.decoder import (
    DecoderConfig,
    DecoderModel,
    evaluate_decoder,
    train_decoder,
)
from spikeloop.encoder import EncoderConfig, EncoderModel, generate_closed_loop
from spikeloop.kinematics import (
    DEFAULT_DECAY,
    KinematicChain,
    forward_kinematics,
    integrate_trace,
    inverse_kinematics,
    workspace_annulus,
)
from spikeloop.loop import LoopConfig, run_full_loop
from spikeloop.nn import (
    AttentionBlock,
    DenseLayer,
    LayerNorm,
    attention_forward,
    block_parameters,
    dense_forward,
    finite_difference_gradient,
    layer_norm_forward,
    max_relative_error,
    mse_loss,
    softmax_cross_entropy,
)
from spikeloop.service import ServiceRuntime, create_app

DECODER_R2_FLOOR = 0.85
DECODER_BUDGET_S = 600.0
ENCODER_CE_FACTOR = 0.75
ENCODER_BUDGET_S = 2700.0
STABILITY_SEEDS = 5
STABILITY_BINS = 500
LOOP_TRACES = 20
LOOP_CORR_FLOOR = 0.7
LOOP_RMSE_CEILING_MM = 20.0


def stitched_test_trace(dataset, bins):
    parts = [t.velocities for t in dataset.split("test")]
    return np.concatenate(parts)[:bins]


def test_decoder_fidelity(desk_dataset, desk_decoder, acceptance):
    model, history = desk_decoder
    score, _ = evaluate_decoder(model, desk_dataset, split="test")
    detail = (f"mean R2 {score.mean:.4f} vs {DECODER_R2_FLOOR}, "
              f"{history.seconds:.0f}s vs {DECODER_BUDGET_S:.0f}s, "
              f"{model.config.epochs} epochs")
    passed = (score.mean >= DECODER_R2_FLOOR
              and history.seconds <= DECODER_BUDGET_S
              and model.config.epochs <= 30)
    acceptance("decoder-fidelity", passed, detail)
    assert passed, detail


def test_encoder_training(desk_encoder, acceptance):
    model, history = desk_encoder
    bound = ENCODER_CE_FACTOR * history.uniform_loss
    detail = (f"val CE {history.final_val_loss:.1f} vs bound {bound:.1f}, "
              f"{history.seconds:.0f}s vs {ENCODER_BUDGET_S:.0f}s, "
              f"{model.config.epochs} epochs")
    passed = (history.final_val_loss < bound
              and history.seconds <= ENCODER_BUDGET_S
              and model.config.epochs <= 60)
    acceptance("encoder-training", passed, detail)
    assert passed, detail


def test_closed_loop_stability(desk_dataset, desk_encoder, acceptance):
    model, _ = desk_encoder
    trace = stitched_test_trace(desk_dataset, STABILITY_BINS)
    assert trace.shape[0] == STABILITY_BINS
    mu = desk_dataset.mean_count_per_bin()
    fractions = []
    for seed in range(STABILITY_SEEDS):
        counts = generate_closed_loop(model, trace, seed=seed)
        per_bin = counts.mean(axis=1)
        fractions.append(float(np.mean((per_bin >= mu / 3) & (per_bin <= 3 * mu))))
    detail = (f"in-band fractions {['%.3f' % f for f in fractions]} "
              f"vs 0.95, train mean {mu:.3f}")
    passed = all(f >= 0.95 for f in fractions)
    acceptance("closed-loop-stability", passed, detail)
    assert passed, detail


def test_full_loop_fidelity(desk_dataset, desk_decoder, desk_encoder, acceptance):
    decoder, _ = desk_decoder
    encoder, _ = desk_encoder
    chain = KinematicChain.default()
    # test trials are direction-major; stride so the 20 traces cover all
    # reach directions instead of the first direction block
    test_trials = desk_dataset.split("test")
    stride = max(1, len(test_trials) // LOOP_TRACES)
    traces = [t.velocities for t in test_trials[::stride][:LOOP_TRACES]]
    assert len(traces) == LOOP_TRACES
    leaders, decodeds, sq_errors = [], [], []
    for i, leader in enumerate(traces):
        config = LoopConfig(decoder=decoder, encoder=encoder, chain=chain, seed=i)
        result = run_full_loop(config, leader)
        leaders.append(leader)
        decodeds.append(result.decoded_velocities)
        ref = integrate_trace(leader, anchor=(220.0, 0.0), decay=DEFAULT_DECAY)
        err = ref - result.trajectory
        sq_errors.append(np.sum(err * err, axis=1))
    leader_all = np.concatenate(leaders)
    decoded_all = np.concatenate(decodeds)
    corr = [float(np.corrcoef(leader_all[:, c], decoded_all[:, c])[0, 1])
            for c in range(2)]
    rmse = float(np.sqrt(np.mean(np.concatenate(sq_errors))))
    detail = (f"corr {corr[0]:.3f}/{corr[1]:.3f} vs {LOOP_CORR_FLOOR}, "
              f"rmse {rmse:.2f}mm vs {LOOP_RMSE_CEILING_MM}mm")
    passed = all(c >= LOOP_CORR_FLOOR for c in corr) and rmse <= LOOP_RMSE_CEILING_MM
    acceptance("full-loop-fidelity", passed, detail)
    assert passed, detail


def _fk_oracle(chain, angles):
    from scipy.spatial.transform import Rotation

    T = np.eye(4)
    for joint, q in zip(chain.joints, angles):
        R = np.eye(4)
        R[:3, :3] = Rotation.from_rotvec(q * joint.axis).as_matrix()
        S = np.eye(4)
        S[:3, 3] = joint.offset
        T = T @ R @ S
    return T[:3, 3]


def test_kinematics(acceptance):
    chain = KinematicChain.default()
    rng = np.random.default_rng(0xACC)
    lo = np.array([j.lo for j in chain.joints])
    hi = np.array([j.hi for j in chain.joints])

    fk_err = max(
        float(np.linalg.norm(forward_kinematics(chain, q) - _fk_oracle(chain, q)))
        for q in rng.uniform(lo, hi, (200, 6)))

    r_min, r_max = workspace_annulus(chain)
    radii = np.sqrt(rng.uniform(r_min**2, r_max**2, 1000))
    bearings = rng.uniform(-np.pi, np.pi, 1000)
    targets = np.stack([radii * np.cos(bearings), radii * np.sin(bearings),
                        np.zeros(1000)], axis=1)
    angles = np.array([0.0, 0.6, -1.2, 0.6, 0.0, 0.0])
    worst_ik = 0.0
    limits_ok = True
    for target in targets:
        angles = inverse_kinematics(chain, target, angles)
        worst_ik = max(worst_ik, float(np.linalg.norm(
            forward_kinematics(chain, angles) - target)))
        limits_ok = limits_ok and bool(np.all(angles >= lo) and np.all(angles <= hi))

    v = np.array([40.0, -25.0])
    lam = DEFAULT_DECAY
    fixed = integrate_trace(np.tile(v, (2000, 1)), anchor=(0.0, 0.0), decay=lam)[-1]
    expected = lam * v * BIN_S / (1.0 - lam)
    fp_rel = float(np.max(np.abs(fixed - expected) / np.abs(expected)))

    detail = (f"fk {fk_err:.2e}mm vs 1e-9, ik worst {worst_ik:.4f}mm vs 0.5, "
              f"fixed point rel {fp_rel:.2e} vs 1e-9")
    passed = fk_err < 1e-9 and worst_ik <= 0.5 and limits_ok and fp_rel < 1e-9
    acceptance("kinematics", passed, detail)
    assert passed, detail


def test_numerics(acceptance):
    rng = np.random.default_rng(0xACC2)
    worst = {}

    layer = DenseLayer.create(rng, 6, 4, "relu")
    x = rng.normal(0.0, 1.0, (5, 6))
    coeff = rng.normal(0.0, 1.0, (5, 4))
    _, cache = dense_forward(layer, x)
    from spikeloop.nn import dense_backward
    _, grads = dense_backward(layer, cache, coeff)
    num = finite_difference_gradient(
        lambda: float(np.sum(dense_forward(layer, x)[0] * coeff)), layer.weight)
    worst["dense"] = max_relative_error(grads["weight"], num)

    ln = LayerNorm.create(6)
    ln.gamma[...] = rng.normal(1.0, 0.2, 6)
    from spikeloop.nn import layer_norm_backward
    _, ln_cache = layer_norm_forward(ln, x)
    _, ln_grads = layer_norm_backward(ln, ln_cache, coeff[:, :1] * np.ones((1, 6)))
    num = finite_difference_gradient(
        lambda: float(np.sum(layer_norm_forward(ln, x)[0]
                             * (coeff[:, :1] * np.ones((1, 6))))), ln.gamma)
    worst["layernorm"] = max_relative_error(ln_grads["gamma"], num)

    logits = rng.normal(0.0, 2.0, (7, 5))
    targets = rng.integers(0, 5, 7)
    _, dlogits = softmax_cross_entropy(logits, targets)
    num = finite_difference_gradient(
        lambda: softmax_cross_entropy(logits, targets)[0], logits)
    worst["cross-entropy"] = max_relative_error(dlogits, num)

    pred = rng.normal(0.0, 1.0, (6, 2))
    targ = rng.normal(0.0, 1.0, (6, 2))
    _, dpred = mse_loss(pred, targ)
    num = finite_difference_gradient(lambda: mse_loss(pred, targ)[0], pred)
    worst["mse"] = max_relative_error(dpred, num)

    block = AttentionBlock.create(rng, 8, 2, 16, max_len=12, causal=True)
    bx = rng.normal(0.0, 1.0, (2, 6, 8))
    bcoeff = rng.normal(0.0, 1.0, bx.shape)
    from spikeloop.nn import attention_backward
    _, bcache = attention_forward(block, bx)
    _, bgrads = attention_backward(block, bcache, bcoeff)
    num = finite_difference_gradient(
        lambda: float(np.sum(attention_forward(block, bx)[0] * bcoeff)), block.wq)
    worst["attention"] = max_relative_error(bgrads["wq"], num)

    tol = {"dense": 1e-4, "layernorm": 1e-4, "cross-entropy": 1e-4,
           "mse": 1e-4, "attention": 1e-3}
    grads_ok = all(worst[k] < tol[k] for k in worst)

    config = DatasetConfig(directions=(0.0, 180.0), trials_per_direction=10,
                           duration_bins=40, neuron_count=12, seed=1)
    from spikeloop.data import make_dataset
    data = make_dataset(config)
    dec_cfg = DecoderConfig(window_bins=5, hidden_sizes=(16,), neuron_count=12,
                            epochs=2, batch_size=32, seed=9)
    _, h1 = train_decoder(data, dec_cfg)
    _, h2 = train_decoder(data, dec_cfg)
    reproducible = bool(np.array_equal(h1.train_loss, h2.train_loss)
                        and np.array_equal(h1.val_loss, h2.val_loss))

    detail = (" ".join(f"{k} {worst[k]:.1e}" for k in worst)
              + f", reproducible={reproducible}")
    passed = grads_ok and reproducible
    acceptance("numerics", passed, detail)
    assert passed, detail


def test_protocol(acceptance):
    rng = np.random.default_rng(0xACC3)
    dec_cfg = DecoderConfig(window_bins=5, hidden_sizes=(16, 8), neuron_count=16)
    decoder = DecoderModel.init(dec_cfg, rng, norm_mean=np.zeros(dec_cfg.input_dim),
                                norm_scale=np.ones(dec_cfg.input_dim))
    enc_cfg = EncoderConfig(past_bins=4, neuron_count=16, d_model=8, layers=1,
                            heads=2, d_ff=16, dropout=0.0)
    encoder = EncoderModel.init(enc_cfg, rng, vel_mean=np.zeros(2),
                                vel_scale=np.full(2, 40.0))
    # long idle grace: this criterion counts frames for scripted input, so
    # the silence filler must stay out of the way
    runtime = ServiceRuntime(decoder, encoder, KinematicChain.default(),
                             idle_grace_s=30.0)
    app = create_app(runtime)

    spikes_bins, arm_bins = [], []
    ok_shapes = True
    with TestClient(app) as client:
        with client.websocket_connect("/ws") as ws:
            ws.send_json({"type": "hello", "version": 1, "seed": 0})
            ready = ws.receive_json()
            ok_shapes = ready["type"] == "ready"
            for t in range(500):
                vx = 80.0 * np.cos(t / 25.0)
                vy = 80.0 * np.sin(t / 25.0)
                ws.send_json({"type": "vel", "vx": vx, "vy": vy})
                spikes = ws.receive_json()
                arm = ws.receive_json()
                ok_shapes = (ok_shapes and spikes["type"] == "spikes"
                             and arm["type"] == "arm"
                             and len(spikes["counts"]) == 16
                             and len(arm["angles"]) == 6)
                spikes_bins.append(spikes["bin"])
                arm_bins.append(arm["bin"])

    gap_free = (spikes_bins == list(range(500)) and arm_bins == list(range(500)))
    detail = (f"{len(spikes_bins)} spikes + {len(arm_bins)} arm frames, "
              f"gap-free={gap_free}")
    passed = ok_shapes and gap_free
    acceptance("protocol", passed, detail)
    assert passed, detail
