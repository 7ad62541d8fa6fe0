"""Command line interface: single runs, experiment sweeps, SVG re-rendering.

Config files are flat key=value text (# comments); any key can be overridden
with --set key=value. See DEFAULTS for the recognized keys.
"""
from __future__ import annotations

import argparse
import csv
import math
import statistics
import sys
from importlib import resources
from pathlib import Path

from . import svg as svg_mod
from .environment import load_environment
from .geom2d import Pose2
from .pose_graph import PoseGraph
from .sim_runner import METHODS, RunArtifacts, RunConfig, run

BUNDLED_MAPS = ("open", "maze", "forest")

DEFAULTS = {
    "map": "open",
    "method": "ours",
    "alpha": 0.0,
    "beta": 1.0,
    "seed": 0,
    "n_rays": 64,
    "delta": 0.5,
    "scope_radius": 10.0,
    "step_len": 0.5,
    "max_turn_deg": 30.0,
    "fov_deg": 115.0,
    "d_fov": 5.0,
    "g_pullback": 0.25,
    "max_steps": 50000,
}

SUMMARY_FIELDS = [
    "method", "map", "alpha", "beta", "seed",
    "d_max_m", "d_exp_m", "final_coverage", "believed_complete", "steps",
]


def load_map_text(name_or_path: str) -> str:
    if name_or_path in BUNDLED_MAPS:
        return resources.files("volexplore.maps").joinpath(f"{name_or_path}.txt").read_text()
    p = Path(name_or_path)
    if not p.exists():
        raise FileNotFoundError(f"map file not found: {name_or_path}")
    return p.read_text()


def parse_config_file(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    out = {}
    for ln, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{ln}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_run_config(settings: dict) -> RunConfig:
    cfg = dict(DEFAULTS)
    cfg.update(settings)
    map_text = load_map_text(str(cfg["map"]))
    method = str(cfg["method"])
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r} (choose from {METHODS})")
    return RunConfig(
        map_text=map_text,
        method=method,
        alpha=float(cfg["alpha"]),
        beta=float(cfg["beta"]),
        seed=int(cfg["seed"]),
        n_rays=int(cfg["n_rays"]),
        fov=math.radians(float(cfg["fov_deg"])),
        d_fov=float(cfg["d_fov"]),
        delta=float(cfg["delta"]),
        scope_radius=float(cfg["scope_radius"]),
        step_len=float(cfg["step_len"]),
        max_turn=math.radians(float(cfg["max_turn_deg"])),
        g_pullback=float(cfg["g_pullback"]),
        max_steps=int(cfg["max_steps"]),
    )


def result_row(result, map_name: str) -> dict:
    return {
        "method": result.method,
        "map": map_name,
        "alpha": result.alpha,
        "beta": result.beta,
        "seed": result.seed,
        "d_max_m": f"{result.d_max:.6f}",
        "d_exp_m": "" if result.d_exp is None else f"{result.d_exp:.6f}",
        "final_coverage": f"{result.final_coverage:.6f}",
        "believed_complete": str(result.believed_complete).lower(),
        "steps": result.steps,
    }


def write_summary(path: Path, rows: list[dict]):
    with path.open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        w.writerows(rows)


def cmd_run(args) -> int:
    settings = parse_config_file(args.config) if args.config else {}
    for item in args.set or []:
        k, _, v = item.partition("=")
        settings[k] = v
    for key in ("map", "method", "alpha", "beta", "seed", "max_steps"):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    try:
        config = build_run_config(settings)
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    render_every = args.render_every

    def on_step(step, artifacts):
        if render_every and step % render_every == 0:
            (out / f"step_{step:06d}.svg").write_text(svg_mod.render_svg(artifacts))

    result = run(config, keep_artifacts=True, on_step=on_step if render_every else None)

    with (out / "trace.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["distance_m", "coverage_ratio"])
        for d, c in result.trace:
            w.writerow([f"{d:.6f}", f"{c:.6f}"])
    map_name = str(settings.get("map", DEFAULTS["map"]))
    write_summary(out / "summary.csv", [result_row(result, map_name)])
    (out / "final.svg").write_text(svg_mod.render_svg(result.artifacts))
    if result.artifacts.graph is not None:
        (out / "final.state.txt").write_text(result.artifacts.graph.to_text())
    print(
        f"{config.method} on {map_name}: d_max={result.d_max:.1f}m "
        f"coverage={result.final_coverage:.3f} complete={result.believed_complete} "
        f"steps={result.steps}"
    )
    return 0


def _parse_list(val, cast):
    return [cast(x) for x in str(val).split(",") if x != ""]


def _run_one(job):
    settings, map_name = job
    try:
        config = build_run_config(settings)
        result = run(config)
        return result_row(result, map_name), None
    except Exception as e:  # recorded per-run; the sweep continues
        return None, f"{settings}: {e}"


def cmd_sweep(args) -> int:
    try:
        settings = parse_config_file(args.config)
    except (FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    maps = _parse_list(settings.pop("maps", "open,maze,forest"), str)
    methods = _parse_list(settings.pop("methods", "ours,grid,grid-lc"), str)
    alphas = _parse_list(settings.pop("alphas", "0,0.5,1"), float)
    betas = _parse_list(settings.pop("betas", "1"), float)
    seeds = _parse_list(settings.pop("seeds", ",".join(map(str, range(10)))), int)

    jobs = []
    for m in maps:
        for method in methods:
            for a in alphas:
                for b in betas:
                    for s in seeds:
                        j = dict(settings)
                        j.update(map=m, method=method, alpha=a, beta=b, seed=s)
                        jobs.append((j, m))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, failures = [], []
    if args.jobs > 1:
        import multiprocessing as mp

        with mp.Pool(args.jobs) as pool:
            for row, err in pool.imap(_run_one, jobs):
                (rows if row else failures).append(row or err)
    else:
        for job in jobs:
            row, err = _run_one(job)
            (rows if row else failures).append(row or err)

    write_summary(out / "results.csv", rows)
    _write_aggregate(out / "aggregate.csv", rows)
    if failures:
        (out / "failures.txt").write_text("\n".join(failures) + "\n")
        print(f"{len(failures)} run(s) failed; see failures.txt", file=sys.stderr)
    print(f"{len(rows)} runs -> {out / 'results.csv'}")
    return 0


def _write_aggregate(path: Path, rows: list[dict]):
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["method"], r["map"], r["alpha"], r["beta"]), []).append(r)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow([
            "method", "map", "alpha", "beta", "runs",
            "d_max_mean", "d_max_min", "d_max_max",
            "d_exp_mean", "d_exp_min", "d_exp_max",
            "coverage_mean", "coverage_min", "complete_runs",
        ])
        for key in sorted(groups, key=str):
            rs = groups[key]
            dmax = [float(r["d_max_m"]) for r in rs]
            dexp = [float(r["d_exp_m"]) for r in rs if r["d_exp_m"] != ""]
            cov = [float(r["final_coverage"]) for r in rs]
            comp = sum(r["believed_complete"] == "true" for r in rs)
            w.writerow(
                list(key)
                + [len(rs), f"{statistics.mean(dmax):.3f}", f"{min(dmax):.3f}", f"{max(dmax):.3f}"]
                + (
                    [f"{statistics.mean(dexp):.3f}", f"{min(dexp):.3f}", f"{max(dexp):.3f}"]
                    if dexp
                    else ["", "", ""]
                )
                + [f"{statistics.mean(cov):.4f}", f"{min(cov):.4f}", comp]
            )


def cmd_render(args) -> int:
    try:
        map_text = load_map_text(args.map)
        state_text = Path(args.state).read_text()
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    env = load_environment(map_text)
    graph = PoseGraph.from_text(state_text)

    # Reconstruct coverage/trajectory views from the stored true poses.
    from .environment import cast_scan
    from .sim_runner import CoverageTracker

    tracker = CoverageTracker(env)
    for v in graph.vertices:
        visited: set = set()
        cast_scan(env, v.true_pose, math.radians(115.0), 5.0, 16, visited)
        tracker.mark(visited)
    artifacts = RunArtifacts(
        env, tracker, [v.true_pose for v in graph.vertices], [], graph=graph
    )
    Path(args.out).write_text(svg_mod.render_svg(artifacts))
    print(f"wrote {args.out}")
    return 0


def cmd_maps(_args) -> int:
    for name in BUNDLED_MAPS:
        text = load_map_text(name)
        lines = text.splitlines()
        free = sum(line.count(".") for line in lines)
        print(f"{name}: {len(lines[0])}x{len(lines)} cells, {free} free")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="explore", description="2D exploration simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="execute a single run")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--map")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--out", default="runs")
    p.add_argument("--render-every", type=int, default=0, help="SVG snapshot period (0 = off)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter matrix")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default="sweep")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", help="re-render an SVG from a saved run state")
    p.add_argument("--state", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", default="render.svg")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("maps", help="list bundled maps")
    p.set_defaults(func=cmd_maps)

    args = ap.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
