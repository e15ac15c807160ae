"""Command-line pipeline: generate, sync, window, train, infer, simulate.

Configuration comes from a plain ``key = value`` text file (``#`` starts a
comment) plus command-line flags; flags win. Every subcommand is
deterministic given its inputs and ``--seed``, and ``pipeline`` records the
artifacts it produced, the parameters used, and a sha256 digest per file in
``manifest.json``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import dataset as ds
from . import logfmt, model, rtengine, schedsim, synthgen, syncer
from .errors import ConfigError, PulsekitError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_config_file(path: str) -> dict[str, str]:
    cfg: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, value = line.split("=", 1)
            cfg[key.strip()] = value.strip()
    return cfg


def _pick(flag, cfg: dict, key: str, default, cast):
    if flag is not None:
        return flag
    if key in cfg:
        raw = cfg[key]
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return default


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip() != ""]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _log(args, message: str) -> None:
    if args.verbose:
        print(message, file=sys.stderr)


# ---- stage implementations --------------------------------------------------


def build_session_config(cfg: dict, args) -> synthgen.SessionConfig:
    n_devices = _pick(getattr(args, "devices", None), cfg, "devices", 2, int)
    channels = _pick(getattr(args, "channels", None), cfg, "channels_per_device", 1, int)
    n_frames = _pick(getattr(args, "frames", None), cfg, "frames", 20000, int)
    rate = _pick(getattr(args, "rate", None), cfg, "sample_rate", 2000.0, float)
    period = _pick(getattr(args, "period", None), cfg, "pulse_period", 1000, int)
    jitter = _pick(getattr(args, "jitter", None), cfg, "jitter", 1, int)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))

    offsets = _pick(None, cfg, "start_offsets", None, _int_list)
    if offsets is None:
        offsets = [0] + [400] * (n_devices - 1)
    drift = _pick(None, cfg, "drift_ppm", None, _float_list)
    if drift is None:
        drift = [0.0] * n_devices

    specs: list[synthgen.SignalSpec] = []
    for i in range(n_devices * channels):
        key = f"signal.{i}"
        if key in cfg:
            specs.append(synthgen.parse_signal_spec(cfg[key]))
        elif i == 0:
            specs.append(synthgen.DampedSine(freq_hz=rate / 16.0, decay_per_s=0.05))
        elif i == 1:
            specs.append(synthgen.ImpulseTrain(rate_hz=5.0, amplitude=0.8))
        else:
            specs.append(synthgen.WhiteNoise(amplitude=0.3))

    return synthgen.SessionConfig(
        n_devices=n_devices,
        channels_per_device=channels,
        n_frames=n_frames,
        sample_rate_hz=rate,
        pulse_period_frames=period,
        start_offset_frames=offsets,
        drift_ppm=drift,
        pulse_jitter_frames=jitter,
        signal_specs=specs,
        seed=seed,
    )


def stage_generate(cfg: dict, args, outdir: str) -> dict:
    session = build_session_config(cfg, args)
    logs, truth = synthgen.generate_session(session)
    os.makedirs(outdir, exist_ok=True)
    log_paths = []
    for log in logs:
        path = os.path.join(outdir, f"device{log.header.device_id}{logfmt.FILE_EXTENSION}")
        logfmt.write_log_file(log, path)
        log_paths.append(path)
    truth_path = os.path.join(outdir, "ground_truth.npy")
    ds.export_npy(truth.offsets.astype(np.float64), truth_path, double_precision=True)
    return {
        "params": {
            "devices": session.n_devices,
            "channels_per_device": session.channels_per_device,
            "frames": session.n_frames,
            "sample_rate": session.sample_rate_hz,
            "pulse_period": session.pulse_period_frames,
            "start_offsets": session.start_offset_frames,
            "drift_ppm": session.drift_ppm,
            "jitter": session.pulse_jitter_frames,
            "signals": [synthgen.format_signal_spec(s) for s in session.signal_specs],
            "seed": session.seed,
        },
        "artifacts": {"logs": log_paths, "ground_truth": truth_path},
    }


def stage_sync(log_paths: list[str], out_path: str) -> dict:
    logs = [logfmt.parse_log_file(p) for p in log_paths]
    matrix = syncer.sync(logs)
    ds.export_npy(matrix.data, out_path)
    labels_path = out_path + ".labels.json"
    with open(labels_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "row_labels": matrix.row_labels,
                "sample_rate_hz": matrix.sample_rate_hz,
                "timebase": matrix.timebase,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    return {
        "params": {"logs": log_paths},
        "artifacts": {"aligned": out_path, "labels": labels_path},
    }


def build_window_spec(cfg: dict, args) -> ds.WindowSpec:
    input_len = _pick(getattr(args, "input_len", None), cfg, "input_len", 32, int)
    output_len = _pick(getattr(args, "output_len", None), cfg, "output_len", 96, int)
    hop = _pick(getattr(args, "hop", None), cfg, "hop", None, int)
    in_ch = _pick(getattr(args, "input_channels", None), cfg, "input_channels", "0,1", str)
    target = _pick(getattr(args, "target_channel", None), cfg, "target_channel", 0, int)
    return ds.WindowSpec(
        input_len=input_len,
        output_len=output_len,
        hop=hop,
        input_channels=tuple(_int_list(in_ch)),
        target_channel=target,
    )


def stage_window(aligned_path: str, spec: ds.WindowSpec, out_prefix: str) -> dict:
    matrix = np.load(aligned_path)
    windows = ds.make_windows(matrix, spec)
    inputs_path = out_prefix + "_inputs.npy"
    targets_path = out_prefix + "_targets.npy"
    norm_path = out_prefix + "_norm.json"
    ds.export_npy(windows.inputs, inputs_path)
    ds.export_npy(windows.targets, targets_path)
    stats = windows.norm_stats
    with open(norm_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "input_mean": stats.input_mean.tolist(),
                "input_std": stats.input_std.tolist(),
                "target_mean": stats.target_mean,
                "target_std": stats.target_std,
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    return {
        "params": {
            "input_len": spec.input_len,
            "output_len": spec.output_len,
            "hop": spec.hop,
            "input_channels": list(spec.input_channels),
            "target_channel": spec.target_channel,
        },
        "artifacts": {"inputs": inputs_path, "targets": targets_path, "norm": norm_path},
        "n_pairs": windows.n_pairs,
    }


def _load_windows(inputs_path: str, targets_path: str, norm_path: str) -> ds.WindowedDataset:
    inputs = np.load(inputs_path)
    targets = np.load(targets_path)
    with open(norm_path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    stats = ds.NormStats(
        input_mean=np.asarray(raw["input_mean"], dtype=np.float64),
        input_std=np.asarray(raw["input_std"], dtype=np.float64),
        target_mean=float(raw["target_mean"]),
        target_std=float(raw["target_std"]),
    )
    spec = ds.WindowSpec(
        input_len=inputs.shape[1],
        output_len=targets.shape[1],
        input_channels=tuple(range(inputs.shape[2])),
    )
    return ds.WindowedDataset(
        inputs=inputs.astype(np.float32),
        targets=targets.astype(np.float32),
        norm_stats=stats,
        spec=spec,
    )


def stage_train(
    windows: ds.WindowedDataset, cfg: dict, args, out_model: str, out_loss: str
) -> dict:
    hidden = _pick(getattr(args, "hidden", None), cfg, "hidden_dim", 16, int)
    lr = _pick(getattr(args, "lr", None), cfg, "lr", 0.05, float)
    epochs = _pick(getattr(args, "epochs", None), cfg, "epochs", 30, int)
    batch = _pick(getattr(args, "batch_size", None), cfg, "batch_size", 32, int)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))

    mcfg = model.ModelConfig(
        input_dim=windows.inputs.shape[2],
        hidden_dim=hidden,
        output_dim=windows.targets.shape[1],
        seq_len=windows.inputs.shape[1],
    )
    hyper = model.TrainConfig(lr=lr, epochs=epochs, batch_size=batch, seed=seed)
    params, curve = model.train(windows, mcfg, hyper)
    model.save_weights(params.astype(np.float32), mcfg, windows.norm_stats, out_model)
    with open(out_loss, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(curve):
            fh.write(f"{i},{loss!r}\n")
    return {
        "params": {
            "hidden_dim": hidden,
            "lr": lr,
            "epochs": epochs,
            "batch_size": batch,
            "seed": seed,
        },
        "artifacts": {"model": out_model, "loss_curve": out_loss},
        "final_loss": curve[-1] if curve else None,
    }


def stage_infer(
    signal: np.ndarray,
    model_path: str,
    cfg: dict,
    args,
    out_pred: str,
    out_stats: str,
) -> dict:
    net = model.LstmModel.from_file(model_path)
    block_size = _pick(getattr(args, "block_size", None), cfg, "block_size", 16, int)
    buffer_blocks = _pick(getattr(args, "buffer_blocks", None), cfg, "buffer_blocks", 2, int)
    rate = _pick(getattr(args, "rate", None), cfg, "sample_rate", 2000.0, float)
    engine = rtengine.setup(
        rtengine.EngineConfig(
            block_size=block_size,
            sample_rate_hz=rate,
            model=net,
            buffer_blocks=buffer_blocks,
        )
    )
    predictions, stats = rtengine.offline_run(engine, signal.astype(np.float32))
    ds.export_npy(predictions, out_pred)
    # only scheduling-independent counters go in the artifact, so reruns
    # stay digest-identical; wall-clock figures land on stderr instead
    with open(out_stats, "w", encoding="utf-8") as fh:
        for key in (
            "blocks_processed",
            "inferences_completed",
            "inferences_missed",
            "buffer_overflows",
        ):
            fh.write(f"{key}={stats.counters()[key]}\n")
    if args.verbose:
        print(
            f"underruns={stats.underruns} "
            f"max_inference_duration={stats.max_inference_duration:.6f}s",
            file=sys.stderr,
        )
    return {
        "params": {"block_size": block_size, "buffer_blocks": buffer_blocks},
        "artifacts": {"predictions": out_pred, "stats": out_stats},
        "inferences": int(stats.inferences_completed),
    }


def build_sim_config(cfg: dict, args) -> schedsim.SimConfig:
    return schedsim.SimConfig(
        ticks_per_block=_pick(
            getattr(args, "ticks_per_block", None), cfg, "ticks_per_block", 4, int
        ),
        n_blocks=_pick(getattr(args, "blocks", None), cfg, "sim_blocks", 8, int),
        callback_cost_ticks=_pick(
            getattr(args, "callback_cost", None), cfg, "callback_cost", 1, int
        ),
        inference_cost_ticks=_pick(
            getattr(args, "inference_cost", None), cfg, "inference_cost", 5, int
        ),
        trigger_every_blocks=_pick(
            getattr(args, "trigger_every", None), cfg, "trigger_every", 2, int
        ),
        inference_on_audio_thread=bool(
            _pick(getattr(args, "on_audio_thread", None) or None, cfg, "on_audio_thread", False, bool)
        ),
    )


def stage_simulate(sim_cfg: schedsim.SimConfig, gantt_path, csv_path) -> dict:
    trace = schedsim.simulate(sim_cfg)
    text = schedsim.render_gantt(trace)
    artifacts = {}
    if gantt_path:
        with open(gantt_path, "w", encoding="utf-8") as fh:
            fh.write(text)
        artifacts["gantt"] = gantt_path
    if csv_path:
        schedsim.write_trace_csv(trace, csv_path)
        artifacts["csv"] = csv_path
    return {
        "params": {
            "ticks_per_block": sim_cfg.ticks_per_block,
            "blocks": sim_cfg.n_blocks,
            "callback_cost": sim_cfg.callback_cost_ticks,
            "inference_cost": sim_cfg.inference_cost_ticks,
            "trigger_every": sim_cfg.trigger_every_blocks,
            "on_audio_thread": sim_cfg.inference_on_audio_thread,
        },
        "artifacts": artifacts,
        "underruns": trace.count("Underrun"),
        "gantt_text": text,
    }


def write_manifest(path: str, manifest: dict) -> None:
    for stage in manifest["stages"].values():
        for value in stage.get("artifacts", {}).values():
            paths = value if isinstance(value, list) else [value]
            for p in paths:
                if not os.path.exists(p):
                    raise ConfigError(f"manifest references missing artifact {p}")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _collect_digests(stage: dict) -> dict:
    digests = {}
    for value in stage.get("artifacts", {}).values():
        for p in value if isinstance(value, list) else [value]:
            digests[p] = _sha256(p)
    stage["digests"] = digests
    return stage


# ---- argument parsing -------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="pulsekit", description=__doc__)
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a multi-device session")
    p.add_argument("--out", default="session", help="output directory")
    p.add_argument("--devices", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--rate", type=float)
    p.add_argument("--period", type=int)
    p.add_argument("--jitter", type=int)

    p = sub.add_parser("sync", help="align logs into one matrix")
    p.add_argument("logs", nargs="+", help=".bslog files")
    p.add_argument("--out", default="aligned.npy")

    p = sub.add_parser("window", help="cut an aligned matrix into training pairs")
    p.add_argument("aligned", help="aligned matrix .npy")
    p.add_argument("--out-prefix", default="dataset")
    p.add_argument("--input-len", dest="input_len", type=int)
    p.add_argument("--output-len", dest="output_len", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument("--input-channels", dest="input_channels")
    p.add_argument("--target-channel", dest="target_channel", type=int)

    p = sub.add_parser("train", help="train the predictor")
    p.add_argument("inputs", help="dataset inputs .npy")
    p.add_argument("targets", help="dataset targets .npy")
    p.add_argument("norm", help="normalization stats .json")
    p.add_argument("--out", default="model" + model.WEIGHTS_EXTENSION)
    p.add_argument("--loss-out", default="loss.csv")
    p.add_argument("--hidden", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)

    p = sub.add_parser("infer", help="replay a signal through the runtime")
    p.add_argument("--log", help="input .bslog file")
    p.add_argument("--signal", help="input matrix .npy (channels x frames)")
    p.add_argument("--model", required=True, help=".bsnn weights")
    p.add_argument("--channels", help="comma-separated row indices")
    p.add_argument("--out", default="predictions.npy")
    p.add_argument("--stats-out", default="stats.txt")
    p.add_argument("--block-size", dest="block_size", type=int)
    p.add_argument("--buffer-blocks", dest="buffer_blocks", type=int)
    p.add_argument("--rate", type=float)

    p = sub.add_parser("simulate", help="fixed-priority scheduling simulator")
    p.add_argument("--ticks-per-block", dest="ticks_per_block", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--callback-cost", dest="callback_cost", type=int)
    p.add_argument("--inference-cost", dest="inference_cost", type=int)
    p.add_argument("--trigger-every", dest="trigger_every", type=int)
    p.add_argument("--on-audio-thread", dest="on_audio_thread", action="store_true", default=None)
    p.add_argument("--gantt", help="write the chart to this path")
    p.add_argument("--csv", help="write the machine-readable trace to this path")

    p = sub.add_parser("pipeline", help="run every stage end to end")
    p.add_argument("--out", default="pipeline_out", help="output directory")

    return parser


# ---- command handlers -------------------------------------------------------


def _cmd_generate(args, cfg):
    stage = stage_generate(cfg, args, args.out)
    print("\n".join(stage["artifacts"]["logs"] + [stage["artifacts"]["ground_truth"]]))
    return 0


def _cmd_sync(args, cfg):
    stage = stage_sync(args.logs, args.out)
    print(stage["artifacts"]["aligned"])
    return 0


def _cmd_window(args, cfg):
    spec = build_window_spec(cfg, args)
    stage = stage_window(args.aligned, spec, args.out_prefix)
    print(f"{stage['n_pairs']} pairs")
    return 0


def _cmd_train(args, cfg):
    windows = _load_windows(args.inputs, args.targets, args.norm)
    stage = stage_train(windows, cfg, args, args.out, args.loss_out)
    print(f"final loss {stage['final_loss']!r}")
    return 0


def _cmd_infer(args, cfg):
    if (args.log is None) == (args.signal is None):
        raise UsageError("infer needs exactly one of --log or --signal")
    if args.log:
        log = logfmt.parse_log_file(args.log)
        signal = log.samples
    else:
        signal = np.load(args.signal)
    if args.channels:
        signal = signal[_int_list(args.channels)]
    stage = stage_infer(signal, args.model, cfg, args, args.out, args.stats_out)
    print(f"{stage['inferences']} inferences")
    return 0


def _cmd_simulate(args, cfg):
    sim_cfg = build_sim_config(cfg, args)
    stage = stage_simulate(sim_cfg, args.gantt, args.csv)
    if not args.gantt:
        print(stage["gantt_text"], end="")
    return 0


def _cmd_pipeline(args, cfg):
    outdir = args.out
    os.makedirs(outdir, exist_ok=True)
    stages: dict[str, dict] = {}

    gen = stage_generate(cfg, args, os.path.join(outdir, "session"))
    stages["generate"] = _collect_digests(gen)

    aligned = os.path.join(outdir, "aligned.npy")
    stages["sync"] = _collect_digests(stage_sync(gen["artifacts"]["logs"], aligned))

    spec = build_window_spec(cfg, args)
    win = stage_window(aligned, spec, os.path.join(outdir, "dataset"))
    stages["window"] = _collect_digests(win)

    windows = _load_windows(
        win["artifacts"]["inputs"], win["artifacts"]["targets"], win["artifacts"]["norm"]
    )
    model_path = os.path.join(outdir, "model" + model.WEIGHTS_EXTENSION)
    trained = stage_train(windows, cfg, args, model_path, os.path.join(outdir, "loss.csv"))
    stages["train"] = _collect_digests(trained)
    _log(args, f"train: final loss {trained['final_loss']!r}")

    matrix = np.load(aligned)
    signal = matrix[list(spec.input_channels)]
    inf = stage_infer(
        signal,
        model_path,
        cfg,
        args,
        os.path.join(outdir, "predictions.npy"),
        os.path.join(outdir, "stats.txt"),
    )
    stages["infer"] = _collect_digests(inf)

    sim = stage_simulate(
        build_sim_config(cfg, args),
        os.path.join(outdir, "schedule.gantt.txt"),
        os.path.join(outdir, "schedule.csv"),
    )
    sim.pop("gantt_text")
    stages["simulate"] = _collect_digests(sim)

    manifest = {
        "seed": args.seed if args.seed is not None else int(cfg.get("seed", 0)),
        "stages": stages,
    }
    write_manifest(os.path.join(outdir, "manifest.json"), manifest)
    print(os.path.join(outdir, "manifest.json"))
    return 0


_HANDLERS = {
    "generate": _cmd_generate,
    "sync": _cmd_sync,
    "window": _cmd_window,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "simulate": _cmd_simulate,
    "pipeline": _cmd_pipeline,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        cfg = parse_config_file(args.config) if args.config else {}
        return _HANDLERS[args.command](args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except PulsekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
