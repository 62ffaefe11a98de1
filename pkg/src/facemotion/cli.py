"""Command-line entry point.

Subcommands: make-synth, train, sample, eval, inspect-schedule. Every knob
resolves as flag > config file > built-in default, and each run writes a
RunManifest of the fully resolved configuration before doing any work, so
any run can be reproduced exactly with ``--config <manifest>``.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .datakit import (FormatError, SyntheticSpec, load_dataset, load_checkpoint,
                      make_synthetic_dataset, read_audio_features, read_landmarks,
                      read_manifest, read_motion, save_checkpoint, write_manifest,
                      write_motion)
from .denoiser import DenoiserConfig
from .diffusion import build_schedule
from .metrics import (MOUTH_LANDMARKS, NOSE_LANDMARK, ahd, lmd_report,
                      seam_discontinuity)
from .sampling import SamplerConfig, generate_long, read_component_map
from .sequences import COMPONENT_DIMS
from .training import TrainConfig, train_component

CONFIG_ENV_VAR = "FACEMOTION_CONFIG"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class UsageError(ValueError):
    pass


# option tables: dest, flag, type, default, help ---------------------------

_BOOL = "bool"

_OPTIONS = {
    "make-synth": [
        ("out", "--out", str, None, "output dataset directory (required)"),
        ("component", "--component", str, "full", "component tag for the motion"),
        ("n_sequences", "--n-sequences", int, 20, "number of sequences"),
        ("frames", "--frames", int, 300, "frames per sequence"),
        ("d_audio", "--d-audio", int, 8, "audio feature width"),
        ("gain", "--gain", float, 1.0, "oracle gain"),
        ("frequencies", "--frequencies", str, "0.04",
         "comma-separated oracle frequencies (cycles/frame)"),
        ("noise_sigma", "--noise-sigma", float, 0.01, "oracle noise sigma"),
        ("seed", "--seed", int, 0, "generation seed"),
    ],
    "train": [
        ("data", "--data", str, None, "dataset directory (required)"),
        ("component", "--component", str, None,
         "component: lips, expression or pose (required)"),
        ("out", "--out", str, None, "checkpoint output path (required)"),
        ("epochs", "--epochs", int, 200, "training epochs"),
        ("batch", "--batch", int, 64, "batch size"),
        ("lr", "--lr", float, 1e-4, "learning rate"),
        ("lambda_weight", "--lambda", float, 6.0, "reconstruction loss weight"),
        ("T", "--T", int, 500, "diffusion steps"),
        ("window", "--window", int, 100, "training window length (frames)"),
        ("seed", "--seed", int, 0, "training seed"),
        ("d_model", "--d-model", int, 32, "transformer width"),
        ("layers", "--layers", int, 8, "decoder layers"),
        ("heads", "--heads", int, 8, "attention heads"),
        ("audio_mode", "--audio-mode", str, "add_per_layer",
         "audio injection mode"),
        ("id_conditioning", "--id-conditioning", int, 1,
         "condition on the first pose (1) or not (0)"),
        ("audio_encoder_layers", "--audio-encoder-layers", int, 2,
         "audio encoder depth"),
        ("first_frame_loss", "--first-frame-loss", str, "auto",
         "first-frame loss: auto (pose only), on, off"),
        ("emit_curves", "--emit-curves", str, "", "loss curve path "
         "(default: <out>.curve)"),
    ],
    "sample": [
        ("lips", "--lips", str, None, "lips checkpoint (required)"),
        ("expr", "--expr", str, None, "expression checkpoint (required)"),
        ("pose", "--pose", str, None, "pose checkpoint (required)"),
        ("audio", "--audio", str, None, "audio feature file (required)"),
        ("identity", "--identity", str, None, "identity motion file, "
         "first frame is the condition (required)"),
        ("out", "--out", str, None, "generated motion output path (required)"),
        ("mode", "--mode", str, "ddim", "sampler mode: ddim or ancestral"),
        ("ddim_steps", "--ddim-steps", int, 25, "ddim step count"),
        ("chunk_len", "--chunk-len", int, 100, "generation chunk length"),
        ("seed", "--seed", int, 0, "sampling seed"),
        ("T", "--T", int, 500, "diffusion steps of the schedule"),
        ("beta_start", "--beta-start", float, 1e-4, "schedule start"),
        ("beta_end", "--beta-end", float, 0.02, "schedule end"),
        ("index_map", "--index-map", str, "", "component index map file "
         "(default: built-in layout)"),
    ],
    "eval": [
        ("gen", "--gen", str, None, "generated landmark file (required)"),
        ("gt", "--gt", str, None, "ground-truth landmark file (required)"),
        ("report", "--report", str, "", "report output path (default: stdout only)"),
        ("nose_index", "--nose-index", int, NOSE_LANDMARK, "nose landmark index"),
        ("mouth_indices", "--mouth-indices", str,
         ",".join(str(i) for i in MOUTH_LANDMARKS),
         "comma-separated mouth landmark indices"),
        ("chunk_len", "--chunk-len", int, 100, "chunk length for the seam ratio"),
        ("seed", "--seed", int, 0, "recorded for completeness; eval is "
         "deterministic"),
    ],
    "inspect-schedule": [
        ("T", "--T", int, 500, "diffusion steps"),
        ("beta_start", "--beta-start", float, 1e-4, "schedule start"),
        ("beta_end", "--beta-end", float, 0.02, "schedule end"),
        ("emit_curves", "--emit-curves", str, "", "write per-step columns here"),
        ("seed", "--seed", int, 0, "recorded for completeness"),
    ],
}

_REQUIRED_PATHS = {
    "make-synth": ("out",),
    "train": ("data", "component", "out"),
    "sample": ("lips", "expr", "pose", "audio", "identity", "out"),
    "eval": ("gen", "gt"),
    "inspect-schedule": (),
}


def _build_parser() -> _Parser:
    parser = _Parser(prog="facemotion",
                     description="audio-conditioned facial motion diffusion toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name, options in _OPTIONS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="key=value config file; flags take precedence")
        p.add_argument("--run-manifest", default=None,
                       help="where to write the resolved run manifest")
        for dest, flag, typ, _default, help_ in options:
            p.add_argument(flag, dest=dest, type=typ, default=None, help=help_)
    return parser


def _resolve(command: str, args: argparse.Namespace) -> dict:
    """flag > config file > default, with every knob recorded."""
    config_path = args.config or os.environ.get(CONFIG_ENV_VAR)
    file_values: dict[str, str] = {}
    if config_path:
        file_values = read_manifest(config_path)
    resolved = {}
    for dest, _flag, typ, default, _help in _OPTIONS[command]:
        flag_val = getattr(args, dest, None)
        if flag_val is not None:
            resolved[dest] = flag_val
        elif dest in file_values:
            resolved[dest] = typ(file_values[dest])
        else:
            resolved[dest] = default
    for dest in _REQUIRED_PATHS[command]:
        if not resolved[dest]:
            raise UsageError(f"missing required option --{dest.replace('_', '-')}")
    return resolved


def _write_run_manifest(command: str, resolved: dict, path) -> None:
    entries = {"command": command, "toolkit_version": __version__}
    entries.update({k: v for k, v in resolved.items() if k != "run_manifest"})
    write_manifest(path, entries)


# ---------------------------------------------------------------------------
# commands


def cmd_make_synth(resolved: dict) -> int:
    out_dir = Path(resolved["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_manifest("make-synth", resolved,
                        resolved.get("run_manifest") or out_dir / "run_manifest.txt")
    spec = SyntheticSpec(
        n_sequences=resolved["n_sequences"],
        frames_per_sequence=resolved["frames"],
        d_audio=resolved["d_audio"],
        component_tag=resolved["component"],
        oracle_gain=resolved["gain"],
        oracle_frequencies=tuple(float(f) for f in
                                 str(resolved["frequencies"]).split(",")),
        noise_sigma=resolved["noise_sigma"],
        seed=resolved["seed"],
    )
    ds = make_synthetic_dataset(spec, out_dir)
    print(f"wrote {len(ds)} sequences to {out_dir}")
    return EXIT_OK


def cmd_train(resolved: dict) -> int:
    out = Path(resolved["out"])
    curve_path = Path(resolved["emit_curves"] or f"{out}.curve")
    _write_run_manifest("train", resolved,
                        resolved.get("run_manifest") or f"{out}.run")
    dataset = load_dataset(resolved["data"])
    component = resolved["component"]
    if component not in ("lips", "expression", "pose", "full"):
        raise UsageError(f"unknown component {component!r}")
    ff = {"auto": None, "on": True, "off": False}.get(resolved["first_frame_loss"])
    if resolved["first_frame_loss"] not in ("auto", "on", "off"):
        raise UsageError("--first-frame-loss must be auto, on or off")
    cfg = TrainConfig(
        component_tag=component, epochs=resolved["epochs"],
        batch_size=resolved["batch"], learning_rate=resolved["lr"],
        lambda_weight=resolved["lambda_weight"], window_len=resolved["window"],
        T=resolved["T"], seed=resolved["seed"], include_first_frame_loss=ff,
    )
    d_audio = dataset.pairs[0][1].dim
    net = DenoiserConfig(
        d_motion=COMPONENT_DIMS[component], d_audio=d_audio,
        d_model=resolved["d_model"], n_layers=resolved["layers"],
        n_heads=resolved["heads"], audio_injection_mode=resolved["audio_mode"],
        use_id_conditioning=bool(resolved["id_conditioning"]),
        max_frames=resolved["window"],
        audio_encoder_layers=resolved["audio_encoder_layers"],
    )
    params, log = train_component(cfg, dataset, net=net)
    save_checkpoint(out, params)
    curve_path.write_text(log.to_text())
    print(f"trained {component} for {cfg.epochs} epochs "
          f"({log.n_train} train / {log.n_val} val sequences, "
          f"{log.skipped_short} skipped short); checkpoint at {out}")
    return EXIT_OK


def cmd_sample(resolved: dict) -> int:
    out = Path(resolved["out"])
    _write_run_manifest("sample", resolved,
                        resolved.get("run_manifest") or f"{out}.run")
    params = {k: load_checkpoint(resolved[k]) for k in ("lips", "expr", "pose")}
    audio = read_audio_features(resolved["audio"])
    identity = read_motion(resolved["identity"])
    if identity.component_tag != "full":
        raise FormatError("identity file must hold full 70-dim motion")
    index_map = read_component_map(resolved["index_map"]) \
        if resolved["index_map"] else None
    sched = build_schedule(resolved["T"], resolved["beta_start"],
                           resolved["beta_end"])
    cfg = SamplerConfig(mode=resolved["mode"], ddim_steps=resolved["ddim_steps"],
                        chunk_len=resolved["chunk_len"], seed=resolved["seed"])
    seq = generate_long(params["lips"], params["expr"], params["pose"], audio,
                        identity.frames[:1], sched, cfg, index_map=index_map)
    write_motion(out, seq)
    print(f"generated {seq.n_frames} frames to {out}")
    return EXIT_OK


def cmd_eval(resolved: dict) -> int:
    manifest_path = resolved.get("run_manifest") or (
        f"{resolved['report']}.run" if resolved["report"] else None)
    if manifest_path:
        _write_run_manifest("eval", resolved, manifest_path)
    gen = read_landmarks(resolved["gen"])
    gt = read_landmarks(resolved["gt"])
    if gen.points.shape != gt.points.shape:
        raise FormatError(
            f"landmark files disagree: {gen.points.shape} vs {gt.points.shape}"
        )
    mouth = [int(i) for i in str(resolved["mouth_indices"]).split(",")]
    f_rep = lmd_report(gen, gt, align=True)
    m_rep = lmd_report(gen.subset(mouth), gt.subset(mouth), align=True)
    nose = resolved["nose_index"]
    n = gen.n_frames
    flat = gen.points.reshape(n, -1)
    seam = seam_discontinuity(flat, resolved["chunk_len"])
    lines = [
        "metric value frames_used frames_dropped",
        f"f_lmd {f_rep.value:.17g} {f_rep.frames_used} {f_rep.frames_dropped}",
        f"m_lmd {m_rep.value:.17g} {m_rep.frames_used} {m_rep.frames_dropped}",
        f"ahd_generated {ahd(gen, nose):.17g} {n} 0",
        f"ahd_ground_truth {ahd(gt, nose):.17g} {n} 0",
        f"seam_ratio {seam:.17g} {n} 0",
    ]
    report = "\n".join(lines) + "\n"
    sys.stdout.write(report)
    if resolved["report"]:
        Path(resolved["report"]).write_text(report)
    return EXIT_OK


def cmd_inspect_schedule(resolved: dict) -> int:
    sched = build_schedule(resolved["T"], resolved["beta_start"],
                           resolved["beta_end"])
    print(f"T={sched.T}")
    print(f"beta[1]={sched.beta[0]:.10g} beta[T]={sched.beta[-1]:.10g}")
    print(f"alpha_bar[T]={sched.alpha_bar[-1]:.10g}")
    print(f"posterior_var[1]={sched.posterior_var[0]:.10g} "
          f"posterior_var[T]={sched.posterior_var[-1]:.10g}")
    if resolved["emit_curves"]:
        lines = ["t beta alpha alpha_bar posterior_var"]
        for i in range(sched.T):
            lines.append(f"{i + 1} {sched.beta[i]:.10g} {sched.alpha[i]:.10g} "
                         f"{sched.alpha_bar[i]:.10g} {sched.posterior_var[i]:.10g}")
        Path(resolved["emit_curves"]).write_text("\n".join(lines) + "\n")
    if resolved.get("run_manifest"):
        _write_run_manifest("inspect-schedule", resolved, resolved["run_manifest"])
    return EXIT_OK


_HANDLERS = {
    "make-synth": cmd_make_synth,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "inspect-schedule": cmd_inspect_schedule,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        resolved = _resolve(args.command, args)
        resolved["run_manifest"] = args.run_manifest
        return _HANDLERS[args.command](resolved)
    except UsageError as exc:
        print(f"facemotion {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, NotADirectoryError, ValueError) as exc:
        print(f"facemotion {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FloatingPointError, ZeroDivisionError, np.linalg.LinAlgError) as exc:
        print(f"facemotion {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
