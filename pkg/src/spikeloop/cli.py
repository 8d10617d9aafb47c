"""Command-line entry points for the whole workflow: synthesize data, train
and evaluate both models, run batch simulations, serve the live console."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .data import (
    BinnedTrial,
    Dataset,
    DatasetConfig,
    load_dataset,
    make_dataset,
    save_dataset,
)
from .decoder import (
    DecoderConfig,
    evaluate_decoder,
    load_decoder,
    save_decoder,
    train_decoder,
)
from .encoder import (
    EncoderConfig,
    evaluate_encoder_loss,
    load_encoder,
    save_encoder,
    train_encoder,
)
from .kinematics import DEFAULT_DECAY, KinematicChain, load_chain
from .loop import (
    DEFAULT_ANCHOR_MM,
    LoopConfig,
    evaluate_loop,
    metrics_summary,
    run_full_loop,
)


class CliError(Exception):
    pass


def _print_config(name: str, values: dict) -> None:
    print(f"[{name}] " + " ".join(f"{k}={v}" for k, v in values.items()))


def _load_dataset(path) -> Dataset:
    if not path:
        raise CliError("--data is required")
    if not Path(path).exists():
        raise CliError(f"dataset file not found: {path}")
    return load_dataset(path)


def _load_chain_arg(path) -> KinematicChain:
    if not path:
        return KinematicChain.default()
    if not Path(path).exists():
        raise CliError(f"chain file not found: {path}")
    return load_chain(path)


def read_leader_csv(path) -> np.ndarray:
    """Leader velocities, one `vx,vy` pair per line; a header line is allowed."""
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise CliError(f"{path}, line {line_no}: expected vx,vy")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except ValueError:
                if line_no == 1:
                    continue
                raise CliError(f"{path}, line {line_no}: expected vx,vy") from None
    if not rows:
        raise CliError(f"{path}: no velocity rows")
    trace = np.array(rows)
    if not np.all(np.isfinite(trace)):
        raise CliError(f"{path}: velocities must be finite")
    return trace


# --------------------------------------------------------------- subcommands


def _cmd_gen_data(args) -> int:
    directions = DatasetConfig().directions
    if args.trials % len(directions):
        raise CliError(f"--trials must be a multiple of {len(directions)}")
    config = DatasetConfig(trials_per_direction=args.trials // len(directions),
                           seed=args.seed)
    _print_config("gen-data", {"trials": args.trials, "seed": args.seed,
                               "directions": len(directions), "out": args.out})
    dataset = make_dataset(config)
    save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.trials)} trials to {args.out} "
          f"(mean count/bin {dataset.mean_count_per_bin():.3f})")
    return 0


def _cmd_train_decoder(args) -> int:
    dataset = _load_dataset(args.data)
    config = DecoderConfig(seed=args.seed) if args.epochs is None \
        else DecoderConfig(seed=args.seed, epochs=args.epochs)
    _print_config("train-decoder", config.to_dict())
    model, history = train_decoder(dataset, config, log=print)
    save_decoder(model, args.out)
    score, mse = evaluate_decoder(model, dataset, split="validation")
    print(f"saved {args.out}  val R2 mean {score.mean:.4f}  "
          f"val mse {mse:.4f}  {history.seconds:.1f}s")
    return 0


def _cmd_train_encoder(args) -> int:
    dataset = _load_dataset(args.data)
    config = EncoderConfig(seed=args.seed) if args.epochs is None \
        else EncoderConfig(seed=args.seed, epochs=args.epochs)
    _print_config("train-encoder", config.to_dict())
    model, history = train_encoder(dataset, config, log=print)
    save_encoder(model, args.out)
    print(f"saved {args.out}  val CE {history.final_val_loss:.2f} "
          f"(uniform {history.uniform_loss:.2f})  {history.seconds:.1f}s")
    return 0


def _cmd_eval(args) -> int:
    if not args.decoder and not args.encoder:
        raise CliError("eval needs --decoder and/or --encoder")
    dataset = _load_dataset(args.data)
    if args.decoder:
        model = load_decoder(args.decoder)
        _print_config("eval-decoder", model.config.to_dict())
        score, mse = evaluate_decoder(model, dataset, split="test")
        print(f"R2 vx = {score.per_component[0]:.4f}")
        print(f"R2 vy = {score.per_component[1]:.4f}")
        print(f"R2 mean = {score.mean:.4f}")
        print(f"mse = {mse:.4f}")
    if args.encoder:
        model = load_encoder(args.encoder)
        _print_config("eval-encoder", model.config.to_dict())
        ce = evaluate_encoder_loss(model, dataset.split("test"))
        uniform = model.config.neuron_count * np.log(model.config.classes)
        print(f"test CE = {ce:.2f}")
        print(f"uniform CE = {uniform:.2f}")
    return 0


def _cmd_simulate(args) -> int:
    if not args.leader:
        raise CliError("--leader is required")
    if not Path(args.leader).exists():
        raise CliError(f"leader file not found: {args.leader}")
    if not args.decoder or not args.encoder:
        raise CliError("simulate needs --decoder and --encoder")
    leader = read_leader_csv(args.leader)
    config = LoopConfig(decoder=load_decoder(args.decoder),
                        encoder=load_encoder(args.encoder),
                        chain=_load_chain_arg(args.chain),
                        decay=args.decay, temperature=args.temperature,
                        seed=args.seed)
    _print_config("simulate", {"leader": args.leader, "bins": leader.shape[0],
                               "seed": args.seed, "lambda": args.decay,
                               "temperature": args.temperature})
    result = run_full_loop(config, leader)
    if args.data:
        reference = _load_dataset(args.data).mean_count_per_bin()
        ref_label = "train"
    else:
        # no corpus given: band the run against its own mean rate
        reference = float(result.spikes.mean()) or 1.0
        ref_label = "self"
    metrics = evaluate_loop(leader, result, reference_rate=reference,
                            anchor=DEFAULT_ANCHOR_MM, decay=args.decay)
    summary = metrics_summary(metrics) + \
        f"reference_rate = {reference:.6f} ({ref_label})\n"
    print(summary, end="")
    if args.out:
        trial = BinnedTrial(counts=result.spikes.astype(np.int16),
                            velocities=result.decoded_velocities,
                            direction_deg=0.0, trial_id=0)
        save_dataset(Dataset(trials=(trial,), splits=("test",)), args.out)
        metrics_path = f"{args.out}.metrics"
        with open(metrics_path, "w") as fh:
            fh.write(summary)
        print(f"wrote {args.out} and {metrics_path}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceRuntime, create_app

    if not args.decoder or not args.encoder:
        raise CliError("serve needs --decoder and --encoder")
    runtime = ServiceRuntime.load(args.decoder, args.encoder, args.chain,
                                  decay=args.decay, temperature=args.temperature)
    _print_config("serve", {"port": args.port, "lambda": args.decay,
                            "temperature": args.temperature})
    frontend = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    app = create_app(runtime, frontend_dir=frontend if frontend.is_dir() else None)
    uvicorn.run(app, host="0.0.0.0", port=args.port, log_level="info")
    return 0


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spikeloop",
        description="closed-loop neural encode/decode toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, flags):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        if "data" in flags:
            p.add_argument("--data", help="dataset text file")
        if "out" in flags:
            p.add_argument("--out", required=name != "simulate",
                           help="output file path")
        if "seed" in flags:
            p.add_argument("--seed", type=int, default=0)
        if "trials" in flags:
            p.add_argument("--trials", type=int, default=2000,
                           help="total trial count across 8 directions")
        if "epochs" in flags:
            p.add_argument("--epochs", type=int, default=None)
        if "decoder" in flags:
            p.add_argument("--decoder", help="decoder weights file")
        if "encoder" in flags:
            p.add_argument("--encoder", help="encoder weights file")
        if "chain" in flags:
            p.add_argument("--chain", help="kinematic chain config file")
        if "leader" in flags:
            p.add_argument("--leader", help="leader velocity csv (vx,vy per line)")
        if "port" in flags:
            p.add_argument("--port", type=int, default=8000)
        if "temperature" in flags:
            p.add_argument("--temperature", type=float, default=1.0)
        if "lambda" in flags:
            p.add_argument("--lambda", dest="decay", type=float,
                           default=DEFAULT_DECAY,
                           help="velocity integration decay factor")
        return p

    add("gen-data", _cmd_gen_data, "synthesize a cosine-tuned Poisson dataset",
        ["out", "seed", "trials"])
    add("train-decoder", _cmd_train_decoder, "fit the spikes-to-velocity MLP",
        ["data", "out", "seed", "epochs"])
    add("train-encoder", _cmd_train_encoder,
        "fit the velocity-to-spikes transformer", ["data", "out", "seed", "epochs"])
    add("eval", _cmd_eval, "score trained models on the test split",
        ["data", "decoder", "encoder"])
    add("simulate", _cmd_simulate, "run the full loop over a leader trace",
        ["leader", "decoder", "encoder", "chain", "data", "out", "seed",
         "temperature", "lambda"])
    add("serve", _cmd_serve, "start the streaming service",
        ["decoder", "encoder", "chain", "port", "temperature", "lambda"])
    return parser


def run_cli(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
