"""Command-line entry point: ``plenoptic <subcommand> [flags]``.

Exit codes: 0 success, 1 reconstruction goal not met, 2 input error,
3 internal failure.
"""
from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from threadpoolctl import threadpool_limits

from .io import fmt, format_report, read_pfm, write_pfm
from .learning.pipeline import ReconstructionGoal, rmsd_aligned, run_panel
from .render import render_orthographic
from .sao import sael_table
from .scene import (build_octree, build_vlo, count_local_minima, dent_field, environment_sao, load_spec,
                    panel_layout)
from .transport import solve_transport
from .vlo import cell_center

EXIT_OK, EXIT_GOAL, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3
DEFAULTS = {"seed": 0, "threads": 1, "sao_depth": 4, "vlo_depth": 5, "bounces": 2, "goal_um": None,
            "polarimetric": True, "alternations": 3, "view_octant": 7, "resolution": 256}


class InputError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage


@contextmanager
def stage(name: str):
    try:
        yield
    except (InputError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001 - reported with the stage name
        raise StageError(name, exc) from exc


def settings(args, spec) -> dict:
    """Spec ``run`` values override flags; flags override defaults."""
    out = dict(DEFAULTS)
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            out[key] = flag
        if spec is not None:
            value = getattr(spec.run, key)
            if value is not None:
                out[key] = value
    return out


def _load(args):
    if not args.spec:
        raise InputError("--spec is required")
    try:
        return load_spec(args.spec)
    except FileNotFoundError as exc:
        raise InputError(f"spec file not found: {args.spec}") from exc
    except ValidationError as exc:
        lines = [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in exc.errors()]
        raise InputError("invalid spec:\n  " + "\n  ".join(lines)) from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def _out_dir(args) -> Path:
    if not args.out:
        raise InputError("--out is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_scene(args) -> int:
    spec = _load(args)
    cfg = settings(args, spec)
    out = _out_dir(args)
    rows = [("schema_version", spec.schema_version), ("panels", len(spec.panels)),
            ("vlo_depth", cfg["vlo_depth"]), ("sao_depth", cfg["sao_depth"])]
    with stage("vlo"):
        vlo = build_vlo(spec, cfg["vlo_depth"])
        (out / "scene.vlo").write_bytes(vlo.to_bytes())
        rows += [("vlo_nodes", vlo.node_count()), ("vlo_occupied_leaves", len(vlo.occupied_leaves()))]
    with stage("environment"):
        (out / "environment.sao").write_bytes(environment_sao(spec, cfg["sao_depth"]).to_bytes())
    with stage("panels"):
        for ps in spec.panels:
            panel = ps.to_panel()
            x, y = panel.coords()
            z, _, _ = panel.height(x, y)
            dents = dent_field(panel)
            write_pfm(out / f"{ps.name}_height.pfm", z)
            write_pfm(out / f"{ps.name}_truth_depth.pfm", dents)
            (out / f"{ps.name}_brdf.json").write_text(ps.to_brdf().to_json() + "\n")
            tol = 1e-3 * float(np.max(np.abs(dents))) if dents.any() else 0.0
            rows += [(f"{ps.name}.grid", ps.grid), (f"{ps.name}.extent_m", ps.extent),
                     (f"{ps.name}.dents", len(panel.dents)),
                     (f"{ps.name}.local_minima", count_local_minima(dents, tol)),
                     (f"{ps.name}.max_dent_depth_um", 1e6 * float(-dents.min()) if dents.size else 0.0)]
    report = format_report("scene", rows)
    (out / "scene.txt").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_render(args) -> int:
    spec = _load(args)
    cfg = settings(args, spec)
    out = _out_dir(args)
    with stage("vlo"):
        vlo = build_vlo(spec, cfg["vlo_depth"])
    with stage("render"):
        v, res = cfg["view_octant"], cfg["resolution"]
        culled = render_orthographic(vlo, v, res, cull=True)
        plain = render_orthographic(vlo, v, res, cull=False)
        if not np.array_equal(culled.material, plain.material):
            raise RuntimeError("culled and unculled renders differ")
        write_pfm(out / f"render_oct{v}_material.pfm", culled.material.astype(np.float32))
        write_pfm(out / f"render_oct{v}_depth.pfm", np.where(np.isfinite(culled.depth), culled.depth, -1.0))
    s, u = culled.stats, plain.stats
    rows = [("view_octant", v), ("resolution", res), ("foreground_pixels", int(culled.foreground.sum())),
            ("nodes_visited", s.nodes_visited), ("nodes_culled", s.nodes_culled),
            ("nodes_visited_without_culling", u.nodes_visited), ("nodes_total", s.nodes_without_culling),
            ("leaves_drawn", s.leaves_drawn), ("leaves_drawn_without_culling", u.leaves_drawn)]
    report = format_report("render", rows)
    (out / "render.txt").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_transport(args) -> int:
    spec = _load(args)
    cfg = settings(args, spec)
    out = _out_dir(args)
    with stage("octree"):
        p = build_octree(spec, cfg["vlo_depth"], cfg["sao_depth"], cfg["polarimetric"])
    with stage("transport"):
        rep = solve_transport(p, cfg["bounces"])
    with stage("output"):
        x0, x1, y0, y1 = panel_layout(len(spec.panels))[0]
        target = np.array([(x0 + x1) / 2, (y0 + y1) / 2, 0.5])
        nodes = p.nodes()
        nearest = min(nodes, key=lambda q: (float(np.sum((cell_center(q) - target) ** 2)), q)) if nodes else None
        if nearest is not None:
            (out / "exitant_center.sao").write_bytes(p.exitant[nearest].to_bytes())
        upward = 0.0
        if nearest is not None:
            vals = p.exitant[nearest].values_at_depth(p.sao_depth)
            table = sael_table(p.sao_depth)
            up = table.directions[:, 2] > 0
            upward = float(np.sum(vals[up, 0] * table.weights[up]) / np.sum(table.weights[up]))
    rows = [("bounces", rep.bounces), ("channels", p.channels), ("nodes", len(p.nodes())),
            ("increments", rep.increments), ("total_exitant", rep.total_exitant),
            ("center_node", "".join(str(c) for c in nearest) if nearest else "none"),
            ("center_mean_upward_exitant", upward)]
    report = format_report("transport", rows)
    (out / "transport.txt").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    spec = _load(args)
    cfg = settings(args, spec)
    out = _out_dir(args)
    goal = ReconstructionGoal(spec.goal_ppt)
    rows = [("seed", cfg["seed"]), ("sao_depth", cfg["sao_depth"]), ("polarimetric", cfg["polarimetric"]),
            ("alternations", cfg["alternations"]), ("n_ooi", spec.capture.n_ooi), ("n_loi", spec.capture.n_loi),
            ("noise", spec.capture.noise)]
    table = ["panel diffuse_reflectivity mean_dolp rmsd_um relative_error_ppt"]
    met = True
    for k, ps in enumerate(spec.panels):
        with stage(f"reconstruct:{ps.name}"):
            res = run_panel(ps.name, ps.to_panel(), ps.to_brdf(), spec.environment.to_environment(),
                            sao_depth=cfg["sao_depth"], setup=spec.capture.to_setup(),
                            alternations=cfg["alternations"], seed=cfg["seed"] + k,
                            polarimetric=cfg["polarimetric"], n_jobs=cfg["threads"])
        with stage(f"output:{ps.name}"):
            write_pfm(out / f"{ps.name}_depth.pfm", res.deviation_est)
            write_pfm(out / f"{ps.name}_truth_depth.pfm", res.deviation_true)
            write_pfm(out / f"{ps.name}_normals.pfm", res.normals)
            (out / f"{ps.name}_brdf_fit.json").write_text(res.brdf_fit.to_json() + "\n")
        um = 1e6 * res.rmsd_m
        ok = goal.met(res.rmsd_ppt) and (cfg["goal_um"] is None or um <= cfg["goal_um"])
        met &= ok
        table.append(" ".join([ps.name, fmt(ps.to_brdf().diffuse_albedo), fmt(res.mean_dolp), fmt(um),
                               fmt(res.rmsd_ppt)]))
        rows += [(f"{ps.name}.diffuse_reflectivity_fit", res.brdf_fit.diffuse_albedo),
                 (f"{ps.name}.brdf_fit", res.brdf_fit.params()),
                 (f"{ps.name}.mean_dolp", res.mean_dolp), (f"{ps.name}.rmsd_um", um),
                 (f"{ps.name}.relative_error_ppt", res.rmsd_ppt),
                 (f"{ps.name}.relative_to_dent_rms", res.relative_error),
                 (f"{ps.name}.median_normal_error_deg", res.median_normal_error_deg),
                 (f"{ps.name}.unconstrained_fraction", res.degenerate_fraction),
                 (f"{ps.name}.lightfield_coverage", res.lightfield_coverage),
                 (f"{ps.name}.stages", [name for name, _ in res.stage_costs]),
                 (f"{ps.name}.stage_costs", [c for _, c in res.stage_costs]),
                 (f"{ps.name}.goal", "met" if ok else "goal not met")]
    rows.append(("status", "goal met" if met else "goal not met"))
    report = format_report("reconstruct", rows) + "\n" + "\n".join(table) + "\n"
    (out / "report.txt").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK if met else EXIT_GOAL


def cmd_rmsd(args) -> int:
    try:
        a = read_pfm(args.a).astype(float)
        b = read_pfm(args.b).astype(float)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    if a.shape != b.shape:
        raise InputError(f"grid mismatch: {a.shape} vs {b.shape}")
    rmsd = rmsd_aligned(a, b)
    rows = [("rmsd", rmsd)]
    if args.extent is not None:
        rows.append(("relative_error_ppt", 1000.0 * rmsd / args.extent))
    report = format_report("rmsd", rows)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report)
    sys.stdout.write(report)
    return EXIT_OK


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return text == "on"


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plenoptic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--spec", help="scene spec (JSON)")
        p.add_argument("--out", help="output directory" if out_required else "report file")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=_positive)
        p.add_argument("--sao-depth", dest="sao_depth", type=_positive)
        p.add_argument("--vlo-depth", dest="vlo_depth", type=_positive)
        p.add_argument("--bounces", type=int)
        p.add_argument("--goal-um", dest="goal_um", type=float)
        p.add_argument("--polarimetric", type=_on_off)

    for name, fn, help_ in [("gen-scene", cmd_gen_scene, "write scene files and ground truth"),
                            ("render", cmd_render, "orthographic material render with culling stats"),
                            ("transport", cmd_transport, "solve light transport in the scene octree"),
                            ("reconstruct", cmd_reconstruct, "simulate captures and reconstruct the panels")]:
        p = sub.add_parser(name, help=help_)
        common(p)
        p.set_defaults(func=fn)
    p = sub.add_parser("rmsd", help="mean-aligned RMSD between two depth maps")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--extent", type=float, help="linear extent for parts-per-thousand")
    common(p, out_required=False)
    p.set_defaults(func=cmd_rmsd)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        # one BLAS thread keeps reductions, hence outputs, independent of --threads
        with threadpool_limits(limits=1):
            return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"error: internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
