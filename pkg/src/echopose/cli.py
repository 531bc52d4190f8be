"""Command-line front door.

Subcommands: ``simulate`` renders a scene config to WAV plus a ground-truth
CSV, ``track`` runs the full ranging/pose pipeline over a recording,
``eval`` scores a pose CSV against a truth CSV, ``train-attention`` and
``train-activity`` build datasets and fit the classifiers, ``multidevice``
runs the time-multiplexed two-transmitter demo.

Exit codes: 0 success, 2 configuration error, 3 input format error,
4 runtime/signal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import datasets, multidevice as mdev, sim
from .attention import (
    ActivityModel,
    ClassifierModel,
    classify_activity,
    train_activity_classifier,
    train_classifier,
)
from .audio_io import AtomicTextWriter, WavReader, atomic_write_text
from .calibration import CalibrationData, calibrate_reference
from .chirp import ChirpSpec, SampleBuffer, write_transmit_wav
from .errors import ConfigurationError, EchoPoseError, FormatError, ScenarioError
from .metrics import evaluate_tracking
from .pose import PoseTracker
from .ranging import PipelineConfig, RangingSession

POSE_COLUMNS = ("t", "d_m", "yaw", "pitch", "valid", "source")
RANGE_COLUMNS = (
    "t", "d_l", "d_r", "d_s",
    "dropped_l", "dropped_r", "dropped_s",
    "conf_l", "conf_r", "conf_s", "ld_lr",
)


def _out_path(path: str) -> str:
    root = os.environ.get("ECHOPOSE_OUT_ROOT")
    if root and not os.path.isabs(path):
        os.makedirs(root, exist_ok=True)
        return os.path.join(root, path)
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def _resolve_config(name: str) -> str:
    if os.path.exists(name):
        return name
    from importlib import resources

    candidate = name if name.endswith(".yaml") else name + ".yaml"
    ref = resources.files("echopose") / "configs" / candidate
    if ref.is_file():
        return str(ref)
    raise ConfigurationError(f"scenario config not found: {name}")


# ---------------------------------------------------------------------------
# simulate


def run_simulate(args) -> int:
    scenario, spec = sim.load_scenario(_resolve_config(args.config))
    if args.seed is not None:
        scenario.seed = args.seed
    base = os.path.join(args.out_dir, scenario.name)
    wav_path = _out_path(base + ".wav")
    trace_path = _out_path(base + "_truth.csv")
    n = sim.write_scene(scenario, spec, wav_path, trace_path)
    print(f"wrote {wav_path} ({n} samples) and {trace_path}")
    if args.emit_transmit:
        tx = _out_path(args.emit_transmit)
        write_transmit_wav(spec, args.transmit_duration, tx)
        print(f"wrote transmit waveform {tx}")
    return 0


# ---------------------------------------------------------------------------
# track


def _read_wav_checked(path, spec: ChirpSpec) -> WavReader:
    reader = WavReader(path)
    if reader.sample_rate != spec.sample_rate:
        reader.close()
        raise FormatError(
            f"expected {spec.sample_rate} Hz input, got {reader.sample_rate}"
        )
    if reader.channels < 3:
        reader.close()
        raise FormatError(f"need 3 microphone channels, got {reader.channels}")
    return reader


def track_wav(
    wav_path,
    pose_path,
    range_path,
    spec: ChirpSpec | None = None,
    config: PipelineConfig | None = None,
    calibration_path=None,
    calibrate_window: float | None = None,
    jsonl: bool = False,
) -> CalibrationData:
    """Full pipeline over a recording with bounded memory; returns the
    calibration used."""
    spec = spec or ChirpSpec()
    config = config or PipelineConfig()
    if calibration_path is not None:
        cal = CalibrationData.load(calibration_path)
    elif calibrate_window is not None:
        with _read_wav_checked(wav_path, spec) as reader:
            n_cal = int((calibrate_window + 0.25) * spec.sample_rate)
            head = reader.read(n_cal)[:3]
        cal = calibrate_reference(
            SampleBuffer(head, spec.sample_rate), spec, calibrate_window, config
        )
    else:
        raise ConfigurationError("provide a calibration file or --calibrate window")

    session = RangingSession(spec, cal, config)
    tracker = PoseTracker(cal)
    reader = _read_wav_checked(wav_path, spec)
    try:
        blocks = (b[:3] for b in reader.blocks())
        with AtomicTextWriter(_out_path(os.fspath(pose_path))) as pose_f, \
             AtomicTextWriter(_out_path(os.fspath(range_path))) as rng_f:
            if not jsonl:
                pose_f.write(",".join(POSE_COLUMNS) + "\n")
                rng_f.write(",".join(RANGE_COLUMNS) + "\n")
            for est in session.iter_stream(blocks):
                p = tracker.update(est)
                if jsonl:
                    pose_f.write(json.dumps({
                        "t": round(p.t, 6), "d_m": p.d_m, "yaw": p.yaw,
                        "pitch": p.pitch, "valid": p.valid, "source": p.source,
                    }) + "\n")
                    rng_f.write(json.dumps({
                        "t": round(est.t, 6),
                        "d": [round(float(x), 6) for x in est.distances],
                        "dropped": [bool(x) for x in est.dropped],
                        "conf": [round(float(x), 4) for x in est.confidence],
                        "ld_lr": round(est.ld_lr, 3),
                    }) + "\n")
                else:
                    pose_f.write(
                        f"{p.t:.6f},{p.d_m:.6f},{p.yaw:.4f},{p.pitch:.4f},"
                        f"{int(p.valid)},{p.source}\n"
                    )
                    d = est.distances
                    c = est.confidence
                    rng_f.write(
                        f"{est.t:.6f},{d[0]:.6f},{d[1]:.6f},{d[2]:.6f},"
                        f"{int(est.dropped[0])},{int(est.dropped[1])},{int(est.dropped[2])},"
                        f"{c[0]:.4f},{c[1]:.4f},{c[2]:.4f},{est.ld_lr:.3f}\n"
                    )
    finally:
        reader.close()
    return cal


def run_track(args) -> int:
    spec = ChirpSpec()
    cal = track_wav(
        args.wav,
        args.pose_out,
        args.range_out,
        spec=spec,
        calibration_path=args.calibration,
        calibrate_window=args.calibrate,
        jsonl=args.jsonl,
    )
    if args.save_calibration:
        cal.save(_out_path(args.save_calibration))
        print(f"saved calibration to {args.save_calibration}")
    print(f"wrote {args.pose_out} and {args.range_out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def load_pose_csv(path):
    rows = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True,
                                       encoding="utf-8", dtype=None))
    return rows


def run_eval(args) -> int:
    pred = load_pose_csv(args.pred)
    truth = sim.GroundTruthTrace.read_csv(args.truth)
    report = evaluate_tracking(
        pred["t"], pred["d_m"], pred["yaw"], pred["pitch"],
        truth.t, truth.d_m, truth.yaw, truth.pitch,
        t_start=args.t_start, t_end=args.t_end, grid=args.grid,
    )
    print(report)
    if args.json:
        atomic_write_text(_out_path(args.json), json.dumps(report.as_dict(), indent=2))
    return 0


# ---------------------------------------------------------------------------
# train-attention


def _write_attention_csv(path, ds: datasets.AttentionDataset) -> None:
    header = ",".join([f"f{i:02d}" for i in range(ds.features.shape[1])])
    lines = [header + ",label,trajectory"]
    for i in range(len(ds.labels)):
        vals = ",".join(f"{v:.6g}" for v in ds.features[i])
        lines.append(f"{vals},{int(ds.labels[i])},{ds.trajectory_ids[i]}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _read_attention_csv(path) -> datasets.AttentionDataset:
    raw = np.loadtxt(path, delimiter=",", skiprows=1)
    return datasets.AttentionDataset(
        features=raw[:, :-2],
        labels=raw[:, -2] > 0.5,
        trajectory_ids=raw[:, -1].astype(int),
    )


def run_train_attention(args) -> int:
    spec = ChirpSpec()
    if args.dataset and os.path.exists(args.dataset) and not args.rebuild:
        ds = _read_attention_csv(args.dataset)
    else:
        ds = datasets.build_attention_dataset(
            spec, n_trajectories=args.trajectories, seed=args.seed
        )
        if args.dataset:
            _write_attention_csv(_out_path(args.dataset), ds)
            print(f"wrote dataset {args.dataset} ({len(ds.labels)} frames)")

    if args.folds:
        accs = []
        for tid in np.unique(ds.trajectory_ids):
            xtr, ytr, xte, yte = ds.fold(tid)
            model = train_classifier(xtr, ytr.astype(float) * 2 - 1)
            pred = model.decision_function(xte) > 0
            accs.append(float(np.mean(pred == yte)))
            print(f"fold trajectory={tid}: accuracy {accs[-1]:.3f}")
        print(f"leave-one-trajectory-out mean accuracy: {np.mean(accs):.3f}")

    model = train_classifier(ds.features, ds.labels.astype(float) * 2 - 1)
    model.save(_out_path(args.model))
    print(f"saved attention model to {args.model}")
    return 0


# ---------------------------------------------------------------------------
# train-activity


def run_train_activity(args) -> int:
    spec = ChirpSpec()
    ds = datasets.build_activity_dataset(spec, seeds=range(args.seeds))
    if args.folds:
        accs = []
        for s in np.unique(ds.seeds):
            btr, ltr, bte, lte = ds.fold(s)
            model = train_activity_classifier(btr, ltr)
            pred = [classify_activity(model, b) for b in bte]
            accs.append(float(np.mean([p == t for p, t in zip(pred, lte)])))
            print(f"fold seed={s}: accuracy {accs[-1]:.3f}")
        print(f"leave-one-seed-out mean accuracy: {np.mean(accs):.3f}")
    model = train_activity_classifier(ds.blocks, ds.labels)
    model.save(_out_path(args.model))
    print(f"saved activity model to {args.model}")
    return 0


# ---------------------------------------------------------------------------
# multidevice


def run_multidevice(args) -> int:
    spec = ChirpSpec()
    model = ClassifierModel.load(args.model)
    scene = mdev.two_device_scene(
        fixations_s=args.fixation_s,
        n_alternations=args.alternations,
        distance=args.distance,
        separation=args.separation,
        seed=args.seed,
    )
    records = mdev.run_arbitration(scene, spec, model)
    lines = ["t,active,chosen,truth"]
    for r in records:
        lines.append(
            f"{r.t:.3f},{r.emitting},{r.chosen or ''},{r.truth or ''}"
        )
    atomic_write_text(_out_path(args.out), "\n".join(lines) + "\n")
    post = [r for r in records if r.t >= scene.schedule.skip_s]
    correct = sum(1 for r in post if r.chosen == r.truth)
    print(f"wrote {args.out}; correct in {correct}/{len(post)} post-warmup slots")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="echopose", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a scenario config to WAV + truth CSV")
    s.add_argument("config", help="scenario YAML path or bundled config name")
    s.add_argument("--out-dir", default="out")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--emit-transmit", default=None, help="also write the mono transmit WAV")
    s.add_argument("--transmit-duration", type=float, default=60.0)
    s.set_defaults(func=run_simulate)

    s = sub.add_parser("track", help="run the ranging + pose pipeline over a WAV")
    s.add_argument("wav")
    s.add_argument("--calibration", default=None, help="calibration JSON from a previous run")
    s.add_argument("--calibrate", type=float, default=None,
                   help="fit calibration from the first N seconds of this take")
    s.add_argument("--pose-out", default="pose.csv")
    s.add_argument("--range-out", default="range.csv")
    s.add_argument("--save-calibration", default=None)
    s.add_argument("--jsonl", action="store_true", help="JSON-lines output instead of CSV")
    s.set_defaults(func=run_track)

    s = sub.add_parser("eval", help="score a pose CSV against a ground-truth CSV")
    s.add_argument("pred")
    s.add_argument("truth")
    s.add_argument("--t-start", type=float, default=None)
    s.add_argument("--t-end", type=float, default=None)
    s.add_argument("--grid", default=None)
    s.add_argument("--json", default=None, help="also write the report as JSON")
    s.set_defaults(func=run_eval)

    s = sub.add_parser("train-attention", help="build dataset and train the attention classifier")
    s.add_argument("--model", default="attention_model.json")
    s.add_argument("--dataset", default=None, help="feature CSV to reuse or create")
    s.add_argument("--rebuild", action="store_true")
    s.add_argument("--trajectories", type=int, default=8)
    s.add_argument("--seed", type=int, default=100)
    s.add_argument("--folds", action="store_true", help="report leave-one-trajectory-out accuracy")
    s.set_defaults(func=run_train_attention)

    s = sub.add_parser("train-activity", help="build dataset and train the activity classifier")
    s.add_argument("--model", default="activity_model.json")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--folds", action="store_true", help="report leave-one-seed-out accuracy")
    s.set_defaults(func=run_train_activity)

    s = sub.add_parser("multidevice", help="two-transmitter time-multiplex demo")
    s.add_argument("--model", required=True, help="trained attention model JSON")
    s.add_argument("--out", default="arbitration.csv")
    s.add_argument("--fixation-s", type=float, default=19.0)
    s.add_argument("--alternations", type=int, default=1)
    s.add_argument("--distance", type=float, default=1.0)
    s.add_argument("--separation", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=1)
    s.set_defaults(func=run_multidevice)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except EchoPoseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
