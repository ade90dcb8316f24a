"""Command line interface: phantom generation, segmentation, heat maps,
reachability, batch planning, calibration, registration, and the service."""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import collision, geometry, kinematics, planner, registration, segmentation
from . import phantoms, service, volume as volmod
from .mesh import load_ply, save_ply
from .planner import Classification, PlanParams


def _triplet(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return np.array(parts)


def _load_params(path):
    if path is None:
        return PlanParams()
    with open(path) as f:
        return PlanParams.from_dict(json.load(f))


def _print_record(record):
    entry = record["entry"]
    print(f"entry vertex {entry['vertex']} at "
          f"({entry['position'][0]:.2f}, {entry['position'][1]:.2f}, {entry['position'][2]:.2f})")
    print(f"cost {entry['cost']:.4f}  depth {entry['distance_mm']:.1f} mm  "
          f"angle {entry['angle_deg']:.1f} deg")
    rep = record["report"]
    print(f"deviation 3d {rep['deviation_3d_mm']:.3f} mm  "
          f"lateral {rep['deviation_lateral_mm']:.3f} mm")


def cmd_volume_info(args):
    v = volmod.load_volume(args.volume)
    print("dims:", "x".join(str(d) for d in v.dims))
    print("spacing:", " ".join(f"{s:g}" for s in v.spacing), "mm")
    print("origin:", " ".join(f"{o:g}" for o in v.origin), "mm")
    return 0


def cmd_gen_phantom(args):
    if args.kind == "sphere":
        shell = None
        if args.bone_shell:
            shell = {"r_inner_mm": args.radius * 0.55, "r_outer_mm": args.radius * 0.7,
                     "aperture_axis": (0.0, 0.0, 1.0),
                     "aperture_half_angle_deg": args.aperture_deg}
        vol, center = phantoms.sphere_phantom(size=args.size, spacing=args.spacing,
                                              radius_mm=args.radius, bone_shell=shell)
    elif args.kind == "torso":
        shell = None
        if args.bone_shell:
            shell = {"inner_fraction": 0.55, "outer_fraction": 0.7,
                     "aperture_axis": (0.0, 1.0, 0.0),
                     "aperture_half_angle_deg": args.aperture_deg}
        vol, center = phantoms.torso_phantom(size=args.size, spacing=args.spacing,
                                             bone_shell=shell)
    else:  # ballplate
        rng = np.random.default_rng(args.seed)
        model = registration.default_phantom_model()
        axis = rng.normal(size=3)
        pose = geometry.compose(
            geometry.translation(rng.uniform(20.0, 40.0, 3)),
            geometry.rotation_about_axis(axis, rng.uniform(-20, 20)),
        )
        vol, centers = phantoms.ball_plate_phantom(model, pose, size=args.size,
                                                   spacing=args.spacing)
        if args.model_out:
            registration.save_phantom_model(model, args.model_out)
        if args.truth_out:
            with open(args.truth_out, "w") as f:
                json.dump({"ct_from_sb_matrix": [float(x) for x in pose.matrix().ravel()],
                           "centers": centers.tolist()}, f, indent=1)
        volmod.save_volume(vol, args.output)
        print(f"wrote {args.output} ({'x'.join(str(d) for d in vol.dims)})")
        return 0
    volmod.save_volume(vol, args.output)
    print(f"wrote {args.output} ({'x'.join(str(d) for d in vol.dims)}), "
          f"center at ({center[0]:g}, {center[1]:g}, {center[2]:g}) mm")
    return 0


def cmd_segment(args):
    v = volmod.load_volume(args.volume)
    body = segmentation.body_mask(v, args.threshold, args.closing_radius)
    for out in args.output.split(","):
        out = out.strip()
        if out.endswith(".ply"):
            mesh = segmentation.extract_surface(body, args.smoothing)
            save_ply(mesh, out)
            print(f"wrote {out} ({len(mesh.vertices)} vertices)")
        else:
            mask_vol = volmod.Volume(body.bits.astype(np.int16), body.spacing,
                                     body.origin, body.direction)
            volmod.save_volume(mask_vol, out)
            print(f"wrote {out} ({body.count()} voxels set)")
    return 0


def cmd_heatmap(args):
    v = volmod.load_volume(args.volume)
    params = _load_params(args.params)
    body = segmentation.body_mask(v, args.threshold, args.closing_radius)
    mesh = segmentation.extract_surface(body, args.smoothing)
    hm = planner.build_heatmap(v, body, mesh, args.target, params, workers=args.workers)
    save_ply(hm.mesh, args.output, quality=hm.export_scalars())
    sidecar = args.output.rsplit(".", 1)[0] + ".json"
    with open(sidecar, "w") as f:
        json.dump({"target": [float(x) for x in hm.target],
                   "params": params.to_dict(),
                   "optimal": hm.optimal_index,
                   "class_counts": hm.class_counts()}, f, indent=1)
    print(f"wrote {args.output} and {sidecar}")
    counts = hm.class_counts()
    print("  " + "  ".join(f"{k}={v}" for k, v in counts.items() if v))
    if hm.optimal_index is not None:
        c = hm.candidate(hm.optimal_index)
        print(f"optimal vertex {c.vertex} cost {c.cost:.4f}")
    return 0


def _heatmap_from_ply(path, target, params):
    mesh, quality = load_ply(path)
    if quality is None:
        raise SystemExit("heat map PLY lacks the per-vertex quality scalar")
    n = len(mesh.vertices)
    cls = np.full(n, Classification.FEASIBLE, dtype=np.int8)
    cost = np.full(n, np.nan)
    sentinel = {2.0: Classification.OUT_OF_RANGE, 3.0: Classification.OCCLUDED,
                4.0: Classification.AIR_BLOCKED, 5.0: Classification.UNREACHABLE}
    for i, q in enumerate(quality):
        if q in sentinel and q >= 2.0:
            cls[i] = sentinel[float(q)]
        else:
            cost[i] = q
    dist = np.linalg.norm(mesh.vertices - target, axis=1)
    angles = planner.insertion_angles(mesh.vertices, mesh.normals, target)
    hm = planner.HeatMap(mesh, np.asarray(target, dtype=float), params, dist, angles,
                         np.zeros(n, dtype=np.int32), cls, cost)
    hm.optimal_index = planner._argmin_feasible(hm)
    return hm


def cmd_reach(args):
    params = _load_params(args.params)
    hm = _heatmap_from_ply(args.heatmap, args.target, params)
    scene, arm = collision.load_scene(args.scene, session_mesh=hm.mesh)
    hm2 = collision.grid_reachability(scene, arm, hm, params, workers=args.workers)
    if args.output:
        save_ply(hm2.mesh, args.output, quality=hm2.export_scalars())
        print(f"wrote {args.output}")
    counts = hm2.class_counts()
    print("  " + "  ".join(f"{k}={v}" for k, v in counts.items() if v))
    if hm2.optimal_index is None:
        print("no reachable feasible entry point")
        return 1
    c = hm2.candidate(hm2.optimal_index)
    print(f"optimal vertex {c.vertex} cost {c.cost:.4f}")
    return 0


def cmd_plan(args):
    config = service.PlanConfig(
        skin_threshold_hu=args.threshold,
        closing_radius_mm=args.closing_radius,
        smoothing_iterations=args.smoothing,
        params=_load_params(args.params),
        noise_sigma_mm=args.noise_sigma,
        seed=args.seed,
        workers=args.workers,
        downsample=args.downsample,
    )
    try:
        record, hm, _ = service.run_batch_plan(args.volume, args.target, config,
                                               scene_path=args.scene,
                                               entry_vertex=args.entry)
    except service.ServiceError as e:
        print(f"error [{e.code}]: {e.message}", file=sys.stderr)
        return 1
    if record is None:
        print("no feasible entry point", file=sys.stderr)
        return 1
    if args.output:
        with open(args.output, "w") as f:
            json.dump(record, f, sort_keys=True, separators=(",", ":"))
            f.write("\n")
        print(f"wrote {args.output}")
    _print_record(record)
    return 0


def cmd_calibrate(args):
    samples = registration.load_calibration_samples(args.samples)
    result = registration.hand_eye_qr24([a for a, _ in samples], [b for _, b in samples])
    print("X (end effector -> marker):")
    print(np.array_str(result.x.matrix(), precision=4, suppress_small=True))
    print("Z (base -> camera):")
    print(np.array_str(result.z.matrix(), precision=4, suppress_small=True))
    print(f"residual translation {result.residual_translation_mm:.4f} mm, "
          f"rotation {result.residual_rotation_deg:.4f} deg, "
          f"pre-projection deviation {result.rotation_projection_deviation:.2e}")
    if args.output:
        with open(args.output, "w") as f:
            json.dump({"x_matrix": [float(v) for v in result.x.matrix().ravel()],
                       "z_matrix": [float(v) for v in result.z.matrix().ravel()],
                       "residual_translation_mm": result.residual_translation_mm,
                       "residual_rotation_deg": result.residual_rotation_deg}, f, indent=1)
        print(f"wrote {args.output}")
    return 0


def cmd_register(args):
    v = volmod.load_volume(args.volume)
    model = registration.load_phantom_model(args.phantom)
    det = segmentation.detect_spheres(v, args.threshold, expected=4)
    centroids = np.array([c for c, _ in det])
    classes = np.array([5.0 if r >= args.radius_cut else 2.0 for _, r in det])
    pairs, ct_from_sb, rms = registration.match_phantom(centroids, classes, model)
    print(f"matched {len(pairs)} balls, rms {rms:.4f} mm")
    print("CT <- SB transform:")
    print(np.array_str(ct_from_sb.matrix(), precision=4, suppress_small=True))
    if args.output:
        geometry.save_transform(ct_from_sb, args.output)
        print(f"wrote {args.output}")
    return 0


def cmd_evaluate(args):
    report = planner.placement_report(args.target, args.entry, args.tip)
    print(f"deviation 3d {report.deviation_3d_mm:.6f} mm")
    print(f"deviation lateral {report.deviation_lateral_mm:.6f} mm")
    return 0


def cmd_serve(args):
    config = service.PlanConfig(
        skin_threshold_hu=args.threshold,
        closing_radius_mm=args.closing_radius,
        smoothing_iterations=args.smoothing,
        params=_load_params(args.params),
        noise_sigma_mm=args.noise_sigma,
        seed=args.seed,
        workers=args.workers,
        downsample=args.downsample,
        log_path=args.log,
    )
    if args.ui:
        from . import bridge
        print(f"plan service on {args.host}:{args.port}, "
              f"UI bridge on http://{args.host}:{args.ui_port}/")
        bridge.serve_with_ui(args.host, args.port, args.ui_port, config,
                             static_dir=args.static_dir)
        return 0
    print(f"plan service on {args.host}:{args.port}")
    service.serve(args.host, args.port, config)
    return 0


def _add_pipeline_options(p, workers=True):
    p.add_argument("--threshold", type=float, default=segmentation.SKIN_THRESHOLD_HU,
                   help="skin segmentation threshold in HU")
    p.add_argument("--closing-radius", type=float, default=segmentation.CLOSING_RADIUS_MM,
                   help="closing ball radius in mm (1 cm kernel -> 5)")
    p.add_argument("--smoothing", type=int, default=10,
                   help="surface smoothing iterations (0 disables)")
    p.add_argument("--params", help="JSON file with planning parameters")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="parallel workers")


def build_parser():
    ap = argparse.ArgumentParser(prog="needleplan",
                                 description="CT-guided needle insertion planning")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("volume-info", help="print volume metadata")
    p.add_argument("volume")
    p.set_defaults(func=cmd_volume_info)

    p = sub.add_parser("gen-phantom", help="generate synthetic test volumes")
    p.add_argument("kind", choices=["sphere", "torso", "ballplate"])
    p.add_argument("--size", type=int, default=96)
    p.add_argument("--spacing", type=float, default=1.5)
    p.add_argument("--radius", type=float, default=60.0, help="sphere radius in mm")
    p.add_argument("--bone-shell", action="store_true")
    p.add_argument("--aperture-deg", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model-out", help="write the phantom model JSON (ballplate)")
    p.add_argument("--truth-out", help="write ground-truth pose JSON (ballplate)")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_phantom)

    p = sub.add_parser("segment", help="body mask and skin surface")
    p.add_argument("volume")
    _add_pipeline_options(p, workers=False)
    p.add_argument("-o", "--output", required=True,
                   help="comma list of outputs: .nrrd mask and/or .ply surface")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("heatmap", help="entry-point heat map for a target")
    p.add_argument("volume")
    p.add_argument("--target", type=_triplet, required=True)
    _add_pipeline_options(p)
    p.add_argument("-o", "--output", required=True, help="heat map PLY path")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("reach", help="robot reachability over a heat map")
    p.add_argument("scene")
    p.add_argument("--heatmap", required=True)
    p.add_argument("--target", type=_triplet, required=True)
    p.add_argument("--params", help="JSON file with planning parameters")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_reach)

    p = sub.add_parser("plan", help="full batch plan (heat map + selection + execution)")
    p.add_argument("volume")
    p.add_argument("--target", type=_triplet, required=True)
    p.add_argument("--scene")
    p.add_argument("--entry", type=int, help="override the entry vertex id")
    _add_pipeline_options(p)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--downsample", action="store_true")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("calibrate", help="hand-eye calibration from pose pairs")
    psub = p.add_subparsers(dest="what", required=True)
    ph = psub.add_parser("hand-eye")
    ph.add_argument("samples")
    ph.add_argument("-o", "--output")
    ph.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("register", help="steel-ball phantom registration")
    psub = p.add_subparsers(dest="what", required=True)
    pp = psub.add_parser("phantom")
    pp.add_argument("volume")
    pp.add_argument("phantom", help="phantom model JSON")
    pp.add_argument("--threshold", type=float, default=1500.0)
    pp.add_argument("--radius-cut", type=float, default=3.5)
    pp.add_argument("-o", "--output")
    pp.set_defaults(func=cmd_register)

    p = sub.add_parser("evaluate", help="needle placement metrics")
    p.add_argument("--target", type=_triplet, required=True)
    p.add_argument("--entry", type=_triplet, required=True)
    p.add_argument("--tip", type=_triplet, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="run the TCP plan service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=service.DEFAULT_PORT)
    _add_pipeline_options(p)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--downsample", action="store_true")
    p.add_argument("--log", help="append-only session log file")
    p.add_argument("--ui", action="store_true", help="also serve the web UI bridge")
    p.add_argument("--ui-port", type=int, default=8455)
    p.add_argument("--static-dir", help="UI asset directory (defaults to frontend/dist)")
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
