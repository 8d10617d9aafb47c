"""Command-line workflow: flag validation, file round trips, and the
batch simulate path."""

import numpy as np
import pytest

from spikeloop.cli import read_leader_csv, run_cli
from spikeloop.data import load_dataset
from spikeloop.decoder import DecoderConfig, DecoderModel, save_decoder
from spikeloop.encoder import EncoderConfig, EncoderModel, save_encoder

NEURONS = 12


def write_tiny_models(tmp_path, neurons=NEURONS):
    rng = np.random.default_rng(0)
    dec_cfg = DecoderConfig(window_bins=5, hidden_sizes=(16, 8), neuron_count=neurons)
    decoder = DecoderModel.init(dec_cfg, rng, norm_mean=np.zeros(dec_cfg.input_dim),
                                norm_scale=np.ones(dec_cfg.input_dim))
    enc_cfg = EncoderConfig(past_bins=4, neuron_count=neurons, d_model=8, layers=1,
                            heads=2, d_ff=16, dropout=0.0)
    encoder = EncoderModel.init(enc_cfg, rng, vel_mean=np.zeros(2),
                                vel_scale=np.full(2, 40.0))
    dec_path = tmp_path / "dec.jnkw"
    enc_path = tmp_path / "enc.jnkw"
    save_decoder(decoder, dec_path)
    save_encoder(encoder, enc_path)
    return str(dec_path), str(enc_path)


def write_leader(tmp_path, bins=12, header=False):
    path = tmp_path / "leader.csv"
    rng = np.random.default_rng(1)
    lines = ["vx,vy"] if header else []
    lines += [f"{v[0]:.3f},{v[1]:.3f}" for v in rng.normal(0, 40, (bins, 2))]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def test_unknown_flag_is_rejected(capsys):
    with pytest.raises(SystemExit) as e:
        run_cli(["gen-data", "--out", "x.txt", "--frobnicate", "1"])
    assert e.value.code == 2


def test_missing_subcommand_is_rejected():
    with pytest.raises(SystemExit):
        run_cli([])


def test_gen_data_writes_loadable_file(tmp_path, capsys):
    out = str(tmp_path / "d.txt")
    code = run_cli(["gen-data", "--trials", "16", "--seed", "3", "--out", out])
    assert code == 0
    printed = capsys.readouterr().out
    assert "[gen-data]" in printed and "seed=3" in printed
    dataset = load_dataset(out)
    assert len(dataset.trials) == 16


def test_gen_data_rejects_uneven_trials(tmp_path, capsys):
    code = run_cli(["gen-data", "--trials", "13", "--out", str(tmp_path / "d.txt")])
    assert code == 1
    assert "multiple of 8" in capsys.readouterr().err


def test_train_and_eval_decoder_round_trip(tmp_path, capsys):
    data = str(tmp_path / "d.txt")
    model = str(tmp_path / "m.jnkw")
    assert run_cli(["gen-data", "--trials", "80", "--out", data]) == 0
    assert run_cli(["train-decoder", "--data", data, "--out", model,
                    "--epochs", "1", "--seed", "1"]) == 0
    printed = capsys.readouterr().out
    assert "[train-decoder]" in printed and "saved" in printed
    assert run_cli(["eval", "--decoder", model, "--data", data]) == 0
    printed = capsys.readouterr().out
    assert "R2 vx = " in printed and "R2 mean = " in printed


def test_eval_needs_some_model(tmp_path, capsys):
    code = run_cli(["eval", "--data", str(tmp_path / "missing.txt")])
    assert code == 1
    assert "decoder and/or" in capsys.readouterr().err


def test_eval_missing_data_file(tmp_path, capsys):
    code = run_cli(["eval", "--decoder", "x.jnkw",
                    "--data", str(tmp_path / "nope.txt")])
    assert code == 1
    assert "not found" in capsys.readouterr().err


def test_simulate_writes_outputs_and_is_reproducible(tmp_path, capsys):
    dec_path, enc_path = write_tiny_models(tmp_path)
    leader = write_leader(tmp_path)
    out_a = str(tmp_path / "run_a.txt")
    out_b = str(tmp_path / "run_b.txt")
    argv = ["simulate", "--leader", leader, "--decoder", dec_path,
            "--encoder", enc_path, "--seed", "5"]
    assert run_cli(argv + ["--out", out_a]) == 0
    printed = capsys.readouterr().out
    assert "velocity_corr_x = " in printed and "stable = " in printed
    assert run_cli(argv + ["--out", out_b]) == 0
    with open(out_a, "rb") as a, open(out_b, "rb") as b:
        assert a.read() == b.read()
    with open(out_a + ".metrics") as fh:
        assert "trajectory_rmse_mm = " in fh.read()
    # the spikes file is valid dataset text
    written = load_dataset(out_a)
    assert written.trials[0].counts.shape == (12, NEURONS)


def test_simulate_requires_models(tmp_path, capsys):
    leader = write_leader(tmp_path)
    code = run_cli(["simulate", "--leader", leader])
    assert code == 1
    assert "decoder and --encoder" in capsys.readouterr().err


def test_simulate_missing_leader(tmp_path, capsys):
    dec_path, enc_path = write_tiny_models(tmp_path)
    code = run_cli(["simulate", "--leader", str(tmp_path / "nope.csv"),
                    "--decoder", dec_path, "--encoder", enc_path])
    assert code == 1
    assert "not found" in capsys.readouterr().err


def test_leader_csv_parsing(tmp_path):
    path = write_leader(tmp_path, bins=5, header=True)
    trace = read_leader_csv(path)
    assert trace.shape == (5, 2)

    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(Exception, match="line 2"):
        read_leader_csv(str(bad))

    empty = tmp_path / "empty.csv"
    empty.write_text("\n")
    with pytest.raises(Exception, match="no velocity rows"):
        read_leader_csv(str(empty))


def test_train_encoder_cli_smoke(tmp_path, capsys):
    data = str(tmp_path / "d.txt")
    model = str(tmp_path / "enc.jnkw")
    assert run_cli(["gen-data", "--trials", "80", "--out", data]) == 0
    capsys.readouterr()
    assert run_cli(["train-encoder", "--data", data, "--out", model,
                    "--epochs", "1", "--seed", "2"]) == 0
    printed = capsys.readouterr().out
    assert "[train-encoder]" in printed and "uniform" in printed
    assert run_cli(["eval", "--encoder", model, "--data", data]) == 0
    printed = capsys.readouterr().out
    assert "test CE = " in printed
