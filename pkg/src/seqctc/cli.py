"""Command-line entry point: gen, train, eval, decode.

Exit codes: 0 success, 1 internal numeric or training failure, 2 bad
usage or bad input. Verbosity comes from the SEQCTC_LOG environment
variable (quiet, info, debug); debug turns on per-layer finiteness
checks.

Training writes one line per epoch to the log file. Those lines are a
pure function of the config, so two runs with the same config produce
byte-identical logs; wall-clock timing goes to stderr only.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import layers
from .config import RunConfig, load_config_file
from .ctc import Alphabet, FramePosteriors
from .decode import BeamConfig, beam_decode, greedy_decode
from .errors import (
    CheckpointError,
    ConfigError,
    NumericError,
    SeqctcError,
    StateError,
    TrainingError,
    UsageError,
)
from .metrics import evaluate, format_report_table, report_to_lines
from .network import Network, load_network, save_network, topology_fingerprint
from .optim import AdadeltaState, train_epoch
from .seeding import derive_int
from .synth import GenSpec, generate, load_manifest, load_sample, read_pgm, resize_to

log = logging.getLogger("seqctc")

_INTERNAL_FAILURES = (NumericError, TrainingError, StateError)


def _setup_logging():
    level_name = os.environ.get("SEQCTC_LOG", "info").lower()
    levels = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
    if level_name not in levels:
        raise UsageError(f"SEQCTC_LOG must be quiet, info or debug, got {level_name!r}")
    logging.basicConfig(stream=sys.stderr, level=levels[level_name], format="%(message)s")
    if level_name == "debug":
        layers.CHECK_FINITE = True


def _load_dataset(manifest_path, network_config):
    manifest = load_manifest(manifest_path)
    return [
        load_sample(manifest, i, network_config.input_height, network_config.input_width)
        for i in range(len(manifest))
    ]


def _decoder_from(cfg: RunConfig, args):
    name = args.decoder or cfg.decoder
    width = args.beam_width if args.beam_width is not None else cfg.beam_width
    if name == "greedy":
        return lambda post, alphabet: greedy_decode(FramePosteriors(post), alphabet)
    if name == "beam":
        beam_cfg = BeamConfig(width=width, prune_threshold=cfg.prune_threshold)
        return lambda post, alphabet: beam_decode(FramePosteriors(post), alphabet, beam_cfg)
    raise UsageError(f"unknown decoder {name!r}")


def _gen_spec_for_split(cfg: RunConfig, split: str, per_length: int) -> GenSpec:
    base = cfg.gen
    return GenSpec(
        length_distribution={n: per_length for n in base.length_distribution},
        image_height=base.image_height,
        image_width=base.image_width,
        seed=derive_int(cfg.seed, "gen", split),
        noise_level=base.noise_level,
        jitter=base.jitter,
        spacing=base.spacing,
        scale_range=base.scale_range,
    )


def _require(cfg_value, what):
    if cfg_value is None:
        raise UsageError(f"this command needs {what}")
    return cfg_value


def cmd_gen(cfg: RunConfig, args) -> int:
    if cfg.gen is None:
        raise ConfigError("gen needs a [gen] section in the config")
    out = Path(cfg.gen_out_dir)
    for split, count in (("train", cfg.gen_train_per_length), ("test", cfg.gen_test_per_length)):
        spec = _gen_spec_for_split(cfg, split, count)
        manifest = generate(spec, out / split)
        if len(manifest) == 0:
            log.warning("%s split is empty (all per-length counts are zero)", split)
        histogram = ", ".join(
            f"len {n}: {c}" for n, c in sorted(spec.length_distribution.items())
        )
        print(f"{split}: {len(manifest)} samples ({histogram}) -> {out / split / 'manifest.tsv'}")
    return 0


def _train_manifest_path(cfg: RunConfig):
    if cfg.train_manifest is not None:
        return cfg.train_manifest
    if cfg.gen_out_dir is not None:
        return Path(cfg.gen_out_dir) / "train" / "manifest.tsv"
    raise ConfigError("config has neither [data] train_manifest nor a [gen] section")


def _test_manifest_path(cfg: RunConfig):
    if cfg.test_manifest is not None:
        return cfg.test_manifest
    if cfg.gen_out_dir is not None:
        return Path(cfg.gen_out_dir) / "test" / "manifest.tsv"
    raise ConfigError("config has neither [data] test_manifest nor a [gen] section")


def _optimizer_arrays(state: AdadeltaState):
    out = {}
    for name, v in state.acc_grad.items():
        out[f"opt/g/{name}"] = v
    for name, v in state.acc_update.items():
        out[f"opt/u/{name}"] = v
    return out


def _restore_state(cfg: RunConfig, net: Network, extra) -> AdadeltaState:
    state = AdadeltaState.for_params(net.params, rho=cfg.rho, epsilon=cfg.epsilon)
    for name in net.params:
        g_key, u_key = f"opt/g/{name}", f"opt/u/{name}"
        if g_key not in extra or u_key not in extra:
            raise CheckpointError(f"checkpoint is missing optimizer state for {name}")
        state.acc_grad[name] = extra[g_key]
        state.acc_update[name] = extra[u_key]
    return state


def _save_train_checkpoint(path, net: Network, state: AdadeltaState, cfg: RunConfig, epoch: int):
    save_network(
        path,
        net,
        extra_metadata={
            "epoch": epoch,
            "seed": cfg.seed,
            "rho": cfg.rho,
            "epsilon": cfg.epsilon,
        },
        extra_arrays=_optimizer_arrays(state),
    )


def epoch_log_line(epoch: int, stats) -> str:
    # repr() of float64 round-trips exactly, keeping the line deterministic
    return (
        f"epoch={epoch:03d} mean_loss={stats.mean_loss!r} "
        f"train_rate={stats.recognition_rate!r} "
        f"infeasible={stats.infeasible} steps={stats.step_count}"
    )


def run_training(cfg: RunConfig, resume_path=None, log_stream=None):
    """Shared by the CLI and tests: returns (net, state, last_epoch)."""
    samples = _load_dataset(_train_manifest_path(cfg), cfg.network)
    if resume_path is not None:
        net, metadata, extra = load_network(resume_path)
        if net.fingerprint != topology_fingerprint(cfg.network):
            raise CheckpointError(
                "checkpoint topology does not match the [network] section of the config"
            )
        state = _restore_state(cfg, net, extra)
        start_epoch = int(metadata.get("epoch", 0))
    else:
        net = Network.build(cfg.network, cfg.seed)
        state = AdadeltaState.for_params(net.params, rho=cfg.rho, epsilon=cfg.epsilon)
        start_epoch = 0

    ckpt_dir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    alphabet = Alphabet.digits()
    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        t0 = time.monotonic()
        stats = train_epoch(
            net,
            samples,
            cfg.batch_size,
            state,
            seed=derive_int(cfg.seed, "epoch", epoch),
            alphabet=alphabet,
            threads=cfg.threads,
            clip=cfg.clip,
        )
        line = epoch_log_line(epoch, stats)
        if log_stream is not None:
            log_stream.write(line + "\n")
            log_stream.flush()
        log.info("%s wall=%.2fs", line, time.monotonic() - t0)
        if ckpt_dir:
            _save_train_checkpoint(ckpt_dir / f"epoch_{epoch:03d}.sctc", net, state, cfg, epoch)
    return net, state, cfg.epochs


def cmd_train(cfg: RunConfig, args) -> int:
    stream = None
    try:
        if cfg.log_file:
            # append keeps a resumed run's lines contiguous with the original
            stream = open(cfg.log_file, "a", encoding="utf-8", newline="\n")
        run_training(cfg, resume_path=args.resume, log_stream=stream)
    finally:
        if stream is not None:
            stream.close()
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    ckpt = _require(args.checkpoint, "--checkpoint")
    net, _, _ = load_network(ckpt)
    if net.fingerprint != topology_fingerprint(cfg.network):
        raise CheckpointError(
            "checkpoint topology does not match the [network] section of the config"
        )
    manifest_path = args.manifest or _test_manifest_path(cfg)
    samples = _load_dataset(manifest_path, net.config)
    if not samples:
        raise UsageError(f"manifest {manifest_path} lists no samples")
    decoder = _decoder_from(cfg, args)
    alphabet = Alphabet.digits()
    preds, truths = [], []
    for image, label in samples:
        logits, _ = net.forward(image[None])
        post = net.posteriors(logits)[0]
        preds.append(decoder(post, alphabet).label)
        truths.append(label)
    report = evaluate(preds, truths, alphabet)
    print(format_report_table(report))
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(report_to_lines(report)) + "\n")
    return 0


def _write_posteriors(path, post: np.ndarray) -> None:
    # one row per timestep, entries space-separated, repr precision
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in post:
            fh.write(" ".join(repr(v) for v in row.tolist()) + "\n")


def cmd_decode(cfg: RunConfig, args) -> int:
    ckpt = _require(args.checkpoint, "--checkpoint")
    net, _, _ = load_network(ckpt)
    decoder = _decoder_from(cfg, args)
    alphabet = Alphabet.digits()
    if (args.image is None) == (args.manifest is None):
        raise UsageError("decode needs exactly one of --image or --manifest")
    if args.image is not None:
        raw = read_pgm(args.image)
        fitted = resize_to(raw, net.config.input_height, net.config.input_width)
        image = (fitted.astype(np.float64) / 255.0)[None]
        logits, _ = net.forward(image[None])
        post = net.posteriors(logits)[0]
        result = decoder(post, alphabet)
        print(f"{alphabet.string_of(result.label)}\t{result.score!r}")
        if args.emit_posteriors:
            _write_posteriors(args.emit_posteriors, post)
        return 0
    if args.emit_posteriors:
        raise UsageError("--emit-posteriors needs a single --image input")
    manifest = load_manifest(args.manifest)
    for i, (rel, _) in enumerate(manifest.records):
        image, _ = load_sample(manifest, i, net.config.input_height, net.config.input_width)
        logits, _ = net.forward(image[None])
        post = net.posteriors(logits)[0]
        result = decoder(post, alphabet)
        print(f"{rel}\t{alphabet.string_of(result.label)}\t{result.score!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqctc",
        description="Train, evaluate and decode a digit-string transcription network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_config=True):
        p.add_argument("--config", required=need_config, help="run configuration file")
        p.add_argument("--checkpoint", help="network checkpoint file")
        p.add_argument("--manifest", help="dataset manifest overriding the config")
        p.add_argument("--decoder", choices=("greedy", "beam"), help="decoder override")
        p.add_argument("--beam-width", type=int, help="beam width override")
        p.add_argument("--threads", type=int, help="worker thread override")

    p_gen = sub.add_parser("gen", help="render the synthetic dataset of the [gen] section")
    common(p_gen)

    p_train = sub.add_parser("train", help="train from scratch or resume from a checkpoint")
    common(p_train)
    p_train.add_argument("--resume", help="checkpoint to continue from")

    p_eval = sub.add_parser("eval", help="measure sequence recognition rate on a manifest")
    common(p_eval)
    p_eval.add_argument("--report", help="write a machine-readable report here")

    p_decode = sub.add_parser("decode", help="transcribe one image or a whole manifest")
    common(p_decode, need_config=False)
    p_decode.add_argument("--image", help="one PGM image to transcribe")
    p_decode.add_argument(
        "--emit-posteriors",
        help="write the frame posterior matrix (rows = timesteps) to this file",
    )

    return parser


_DEFAULT_CONFIG_TEXT = "[run]\nseed = 0\n"


def _config_for(args) -> RunConfig:
    if args.config is not None:
        cfg = load_config_file(args.config)
    else:
        from .config import load_config

        cfg = load_config(_DEFAULT_CONFIG_TEXT)
    if args.threads is not None:
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        cfg = dataclasses.replace(cfg, threads=args.threads)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        cfg = _config_for(args)
        handler = {
            "gen": cmd_gen,
            "train": cmd_train,
            "eval": cmd_eval,
            "decode": cmd_decode,
        }[args.command]
        return handler(cfg, args)
    except _INTERNAL_FAILURES as e:
        log.error("error: %s", e)
        return 1
    except (SeqctcError, OSError, ValueError) as e:
        log.error("error: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
