"""``cosmoforge`` command line.

Exit codes: 0 ok, 1 validation or processing failure, 2 usage error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import jrl
from .comms import CommEventLog, simulate
from .frontend import FrontendParams, select_keyframes
from .noise import NoiseEstimate
from .pipeline import (
    PipelineConfig,
    PipelineError,
    estimate_noise_from_dataset,
    estimate_noise_from_trial,
    events_path_for,
    label_outliers,
    load_config,
    load_noise_models,
    load_trials,
    save_noise_models,
    substream_seed,
    synthesize,
)
from .stats import evaluate, load_estimate, summarize
from .sync import Trial, synchronize

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _comm_flag(value: str) -> str:
    if value in ("wifi", "pro-radio", "pro_radio") or value.startswith("custom:"):
        return value
    raise argparse.ArgumentTypeError("expected wifi, pro-radio or custom:<path>")


def _config(args) -> PipelineConfig:
    if not args.config:
        raise UsageError("--config is required")
    return load_config(args.config, seed=args.seed, output=args.out, comm_model=getattr(args, "comm_model", None))


def cmd_synthesize(args) -> int:
    cfg = _config(args)
    result = synthesize(cfg)
    out = cfg.resolve(cfg.output) if args.out is None else Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    jrl.write(result.dataset, out)
    result.events.to_csv(events_path_for(out))
    _emit(result.summary.to_table(), result.summary.to_dict(), args.format)
    return EXIT_OK


def cmd_simulate_comms(args) -> int:
    cfg = _config(args)
    trials = load_trials(cfg)
    seq = synchronize(trials, cfg.anchor_index, cfg.sigma_offset, substream_seed(cfg.seed, "sync"),
                      cfg.offset_is_variance)
    p = cfg.frontend
    keyframes = {r: select_keyframes(seq, r, p.d_kf, p.num_points) for r in seq.robot_ids}
    try:
        events = simulate(cfg.model(), seq, keyframes, seq.start, seq.end, substream_seed(cfg.seed, "comms"))
    except ValueError as exc:
        raise PipelineError("comm_sim", str(exc)) from exc
    out = Path(args.out) if args.out else events_path_for(cfg.resolve(cfg.output))
    events.to_csv(out)
    _emit(f"{len(events)} events -> {out}\n" + json.dumps(events.counts()), events.counts(), args.format)
    return EXIT_OK


def cmd_estimate_noise(args) -> int:
    if bool(args.trial) == bool(args.dataset):
        raise UsageError("give exactly one of --trial or --dataset")
    if args.dataset:
        models = estimate_noise_from_dataset(jrl.read(args.dataset), args.trans_max, args.rot_max)
    else:
        params = FrontendParams()
        if args.config:
            params = load_config(args.config, seed=0).frontend
        trial = Trial.from_file(args.trial, args.robot)
        try:
            models = estimate_noise_from_trial(trial, params, args.seed if args.seed is not None else 0,
                                               args.trans_max, args.rot_max)
        except ValueError as exc:
            raise PipelineError("noise_model", str(exc)) from exc
    paths = save_noise_models(args.out or ".", models)
    data = {k: {"samples": v.sample_count, "Q": v.Q.tolist()} for k, v in models.items()}
    _emit("\n".join(str(p) for p in paths), data, args.format)
    return EXIT_OK


def cmd_classify(args) -> int:
    ds = jrl.read(args.dataset)
    models = load_noise_models(args.noise)
    try:
        labels = label_outliers(ds, models["loop_closure"].Q)
    except ValueError as exc:
        raise PipelineError("noise_model", str(exc)) from exc
    ds.outlier_labels = labels
    ds.noise_models = {k: NoiseEstimate(v.Q, v.sample_count) for k, v in models.items()}
    jrl.write(ds, args.out or args.dataset)
    s = summarize(ds)
    _emit(f"LC {s.lc}  IRLC {s.irlc}", s.to_dict(), args.format)
    return EXIT_OK


def cmd_stats(args) -> int:
    ds = jrl.read(args.dataset)
    events = CommEventLog.from_csv(args.events) if args.events else None
    summary = summarize(ds, events)
    table, data = summary.to_table(), summary.to_dict()
    if args.estimate:
        m = evaluate(load_estimate(args.estimate), ds, align=args.align)
        data["evaluation"] = {"trans_rmse": m.trans_rmse, "rot_rmse": m.rot_rmse, "per_robot": m.per_robot}
        table += f"\nATE trans RMSE | {m.trans_rmse:.4f} m\nATE rot RMSE   | {m.rot_rmse:.5f} rad"
    _emit(table, data, args.format)
    return EXIT_OK


def cmd_validate(args) -> int:
    problems = jrl.validate_file(args.dataset)
    if not problems:
        _emit(f"{args.dataset}: ok", {"ok": True, "problems": []}, args.format)
        return EXIT_OK
    lines = [f"{args.dataset}: {len(problems)} problem(s)"] + [f"  [{p.kind}] {p}" for p in problems]
    _emit("\n".join(lines), {"ok": False, "problems": [{"kind": p.kind, "message": str(p)} for p in problems]},
          args.format, stream=sys.stdout)
    return EXIT_INVALID


def cmd_convert(args) -> int:
    entries, mapper, name, reference = jrl.read_global_graph(args.graph)
    ds = jrl.partition_global_graph(entries, mapper, args.name or name, reference)
    out = args.out or str(Path(args.graph).with_suffix("")) + ".jrl.json"
    jrl.write(ds, out)
    s = summarize(ds)
    _emit(f"{out}\n{s.to_table()}", s.to_dict(), args.format)
    return EXIT_OK


def _emit(text: str, data, fmt: str, stream=None) -> None:
    stream = stream or sys.stdout
    if fmt == "json":
        print(json.dumps(data, indent=2, sort_keys=True, default=str), file=stream)
    else:
        print(text, file=stream)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("table", "json"), default="table")

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--config", help="YAML pipeline config")
    seeded.add_argument("--seed", type=int, help="override the master seed")
    seeded.add_argument("--out", help="output path")

    comm = argparse.ArgumentParser(add_help=False)
    comm.add_argument("--comm-model", type=_comm_flag, help="wifi | pro-radio | custom:<path>")

    parser = argparse.ArgumentParser(prog="python -m cosmoforge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", parents=[common, seeded, comm], help="build a dataset from trials")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("simulate-comms", parents=[common, seeded, comm], help="write a communication event log")
    p.set_defaults(func=cmd_simulate_comms)

    p = sub.add_parser("estimate-noise", parents=[common, seeded], help="fit odometry and loop-closure noise")
    p.add_argument("--trial", help="stamped-pose file of a single trial")
    p.add_argument("--robot", default="r0", help="robot id for --trial")
    p.add_argument("--dataset", help="estimate from an existing dataset instead")
    p.add_argument("--trans-max", type=float, default=0.5)
    p.add_argument("--rot-max", type=float, default=0.05)
    p.set_defaults(func=cmd_estimate_noise)

    p = sub.add_parser("classify", parents=[common], help="relabel loop-closure outliers")
    p.add_argument("dataset")
    p.add_argument("--noise", required=True, help="directory holding odometry.txt and loop_closure.txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("stats", parents=[common], help="summarize a dataset")
    p.add_argument("dataset")
    p.add_argument("--events", help="communication event log CSV")
    p.add_argument("--estimate", help="keyframe estimate file to score")
    p.add_argument("--align", action="store_true", help="rigidly align the estimate first")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("validate", parents=[common], help="check dataset invariants")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("convert", parents=[common], help="partition a centralized graph into robot streams")
    p.add_argument("graph")
    p.add_argument("--out")
    p.add_argument("--name")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except OSError as exc:
        print(f"cosmoforge: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except jrl.JRLError as exc:
        print(f"cosmoforge: jrl_io: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (PipelineError, ValueError, KeyError) as exc:
        print(f"cosmoforge: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
