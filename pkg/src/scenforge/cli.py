"""Command-line entry point.

Exit status: 0 success, 1 pipeline or check failure, 2 usage error.
Results are printed as tab-separated rows; figures are written as SVG files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

from . import __version__
from .conditioner import TASKS

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _row(*cols) -> None:
    print("\t".join(str(c) for c in cols))


def cmd_gen(args) -> int:
    from .pipeline import StageError, load_config, resolve_spec, run, write_artifacts

    try:
        cfg = load_config(args.config, task=args.task, out=args.out, seed=args.seed,
                          rig_path=args.rig, start_index=args.start_index,
                          offline=True if args.offline else None)
    except (ValueError, OSError, TypeError) as e:
        print(f"error: [config] {e}", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        scn = None
        if args.scn is not None:
            with open(args.scn, encoding="utf-8") as fh:
                scn = fh.read()
        spec = resolve_spec(args.prompt, scn, cfg.offline)
        res = run(spec, cfg)
        paths = write_artifacts(res, cfg.out)
    except OSError as e:
        print(f"error: [io] {e}", file=sys.stderr)
        return EXIT_FAIL
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAIL
    for w in res.bundle.meta.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    _row("artifact", "path")
    for name, path in paths.items():
        _row(name, path)
    _row("agents", len(res.trajectories))
    _row("environment", ",".join(sorted(spec.environment)) or "-")
    _row("seconds", f"{time.perf_counter() - t0:.2f}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .conditioner import load_bundle
    from .plotting import render_bundle

    try:
        b = load_bundle(args.bundle)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        print(f"error: [render] corrupt bundle: {e}", file=sys.stderr)
        return EXIT_FAIL
    out = args.out or os.path.join(args.bundle, "render")
    _row("frame", "path")
    for f, p in enumerate(render_bundle(b, out)):
        _row(f, p)
    return EXIT_OK


def cmd_edm_check(args) -> int:
    from .checks import run_edm_checks

    scale = 0.5 if args.fault == "c_noise" else 0.25
    t0 = time.perf_counter()
    checks = run_edm_checks(noise_scale=scale)
    ok = all(c.passed for c in checks if c.gating)
    if args.json:
        json.dump({"passed": ok, "fault": args.fault, "checks": [c.to_json() for c in checks]},
                  sys.stdout, indent=1)
        print()
    else:
        _row("check", "status", "value", "tolerance", "note")
        for c in checks:
            status = "PASS" if c.passed else ("FAIL" if c.gating else "FAIL (non-gating)")
            _row(c.name, status, f"{c.value:.3e}", f"{c.tolerance:.1e}", c.note or "-")
        _row("overall", "PASS" if ok else "FAIL", f"{time.perf_counter() - t0:.1f}s", "-", "-")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_train_toy(args) -> int:
    import numpy as np

    from .io import write_text
    from .plotting import render_loss
    from .toy import GaussianData, TrainingDiverged, sample_model, train

    data = GaussianData()
    try:
        res = train(data, steps=args.steps, lr=args.lr, seed=args.seed)
    except (TrainingDiverged, ValueError) as e:
        print(f"error: [train] {e}", file=sys.stderr)
        return EXIT_FAIL
    os.makedirs(args.out, exist_ok=True)
    lines = ["step,train_loss,eval_loss"]
    lines.append(f"0,,{res.eval_loss[0]!r}")
    for k, (tl, el) in enumerate(zip(res.train_loss, res.eval_loss[1:]), start=1):
        lines.append(f"{k},{tl!r},{el!r}")
    write_text(os.path.join(args.out, "loss.csv"), "\n".join(lines) + "\n")
    write_text(os.path.join(args.out, "params.json"), json.dumps(res.params.to_json()) + "\n")
    render_loss(res.train_loss, res.eval_loss, os.path.join(args.out, "loss.svg"))
    x = sample_model(res.params, args.draws, seed=args.seed)
    mean, std = x.mean(axis=0), x.std(axis=0)
    _row("quantity", "value")
    _row("initial_eval_loss", f"{res.eval_loss[0]:.6f}")
    _row("final_eval_loss", f"{res.eval_loss[-1]:.6f}")
    _row("loss_ratio", f"{res.eval_loss[-1] / res.eval_loss[0]:.4f}")
    _row("sample_mean", ",".join(f"{v:.4f}" for v in mean))
    _row("sample_std", ",".join(f"{v:.4f}" for v in std))
    _row("target_mean", ",".join(f"{v:.4f}" for v in np.asarray(data.mu)))
    _row("target_std", f"{data.s:.4f}")
    _row("figure", os.path.join(args.out, "loss.svg"))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .pipeline import check_artifacts

    problems = check_artifacts(args.dir)
    _row("status", "detail")
    if not problems:
        _row("ok", args.dir)
        return EXIT_OK
    for p in problems:
        _row("problem", p)
    return EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scenforge", description="Scenario to structured-condition pipeline.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="run the full pipeline and write an artifact tree")
    src = g.add_mutually_exclusive_group(required=True)
    src.add_argument("--prompt", help="free-text scenario request")
    src.add_argument("--scn", help="scenario file")
    g.add_argument("--offline", action="store_true", help="use the built-in phrase matcher")
    g.add_argument("--seed", type=int, help="override the scenario seed")
    g.add_argument("--task", choices=TASKS, help="mask pattern (default full_generation)")
    g.add_argument("--out", help="output directory (default ./out)")
    g.add_argument("--config", help="TOML config file")
    g.add_argument("--rig", help="camera rig JSON")
    g.add_argument("--start-index", type=int, help="first waypoint of the clip")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("render", help="per-frame SVGs of a condition bundle")
    r.add_argument("bundle", help="bundle directory")
    r.add_argument("--out", help="directory for the SVGs (default <bundle>/render)")
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("edm-check", help="numeric checks of the diffusion kernel")
    e.add_argument("--json", action="store_true", help="machine-readable output")
    e.add_argument("--fault", choices=["c_noise"], help="inject a known-wrong coefficient")
    e.set_defaults(func=cmd_edm_check)

    t = sub.add_parser("train-toy", help="train the toy denoiser on Gaussian data")
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--lr", type=float, default=0.02)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--draws", type=int, default=10_000)
    t.add_argument("--out", default="toy_out")
    t.set_defaults(func=cmd_train_toy)

    v = sub.add_parser("validate", help="reload and re-check an artifact tree")
    v.add_argument("dir")
    v.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
