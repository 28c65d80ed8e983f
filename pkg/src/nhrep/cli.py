"""Command-line surface for the conversion pipeline and implicit ops.

Heavy imports happen inside main() so the NHREP_THREADS cap can be applied
to the BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_thread_cap() -> None:
    cap = os.environ.get("NHREP_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="nhrep",
        description="Convert labeled boundary meshes to neural halfspace "
        "representations; query, extract, evaluate, and combine them.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convert", help="mesh -> trained checkpoint")
    c.add_argument("mesh", help="input .brepmesh file")
    c.add_argument("-o", "--output", required=True, help="checkpoint path")
    c.add_argument("--iters", type=int, default=None, help="training iterations")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--samples", type=int, default=None, help="surface sample count")
    c.add_argument("--width", type=int, default=None, help="hidden layer width")
    c.add_argument("--batch", type=int, default=None, help="surface batch size")
    c.add_argument("--no-correction", action="store_true",
                   help="disable the correction term (noise mode)")
    c.add_argument("--merge-smooth", action="store_true",
                   help="merge patches joined only by smooth curves first")
    c.add_argument("--config", default=None, help="key=value training config file")
    c.add_argument("--desk", action="store_true",
                   help="small-fixture preset (narrow net, small batches)")
    c.add_argument("--log", default=None, help="CSV training-log path")

    e = sub.add_parser("extract", help="checkpoint -> isosurface mesh (OBJ)")
    e.add_argument("checkpoint")
    e.add_argument("-o", "--output", required=True)
    e.add_argument("--res", type=int, default=256)
    e.add_argument("--iso", type=float, default=0.0)

    v = sub.add_parser("eval", help="checkpoint vs ground-truth mesh -> metrics CSV")
    v.add_argument("checkpoint")
    v.add_argument("truth", help="ground-truth .brepmesh file")
    v.add_argument("-o", "--output", default=None, help="CSV path (default stdout)")
    v.add_argument("--res", type=int, default=256)
    v.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("query", help="inside/outside query at points")
    q.add_argument("checkpoint")
    q.add_argument("point", nargs="*", type=float,
                   help="x y z (multiples of 3); or use --points")
    q.add_argument("--points", default=None, help="text file with x y z per line")

    b = sub.add_parser("boolean", help="combine two checkpoints and extract")
    b.add_argument("a")
    b.add_argument("b")
    b.add_argument("--op", choices=("union", "intersection", "a_minus_b"),
                   default="union")
    b.add_argument("-o", "--output", required=True)
    b.add_argument("--res", type=int, default=256)

    o = sub.add_parser("offset", help="extract an offset surface (isovalue shift)")
    o.add_argument("checkpoint")
    o.add_argument("-o", "--output", required=True)
    o.add_argument("--iso", type=float, required=True)
    o.add_argument("--res", type=int, default=256)

    r = sub.add_parser("blend", help="extract a crease-blended surface")
    r.add_argument("checkpoint")
    r.add_argument("-o", "--output", required=True)
    r.add_argument("--rho", type=float, default=0.05)
    r.add_argument("--res", type=int, default=256)

    i = sub.add_parser("inspect", help="dump patch graph and tree expression")
    i.add_argument("mesh")
    i.add_argument("--merge-smooth", action="store_true")
    return p


def _cmd_convert(args) -> int:
    import numpy as np

    from .boolean_tree import construct_tree, group_patches, rewire_leaves
    from .brep_io import load_brep, normalize
    from .checkpoint import save_checkpoint
    from .field import LossWeights
    from .patch_graph import build_patch_graph, merge_smooth_patches
    from .trainer import TrainConfig, desk_config, load_config, train

    mesh = load_brep(args.mesh)
    mesh, transform = normalize(mesh)
    graph = build_patch_graph(mesh)
    if args.merge_smooth:
        graph, mesh = merge_smooth_patches(graph, mesh)
    res = construct_tree(graph, mesh)
    for note in res.notes:
        print(f"note: {note}", file=sys.stderr)
    grouping = group_patches(res.patch_set, res.graph)
    tree = rewire_leaves(res.tree, grouping)

    if args.config:
        cfg = load_config(args.config)
    elif args.desk:
        cfg = desk_config(seed=args.seed)
    else:
        cfg = TrainConfig()
    updates = {"seed": args.seed}
    if args.iters is not None:
        updates["iterations"] = args.iters
    if args.samples is not None:
        updates["sample_count"] = args.samples
    if args.width is not None:
        updates["hidden"] = (args.width,) * 3
    if args.batch is not None:
        updates["batch_surface"] = args.batch
        updates["local_samples"] = args.batch
    from dataclasses import replace as dc_replace

    cfg = dc_replace(cfg, **updates)
    weights = LossWeights(use_correction=not args.no_correction)
    ckpt = train(res.mesh, tree, grouping, cfg, weights=weights,
                 transform=transform, log_path=args.log)
    save_checkpoint(args.output, ckpt)
    print(f"wrote {args.output} (tree: {ckpt.expression})")
    return 0


def _cmd_extract(args) -> int:
    from .checkpoint import load_checkpoint
    from .isosurface import GridSpec, extract
    from .mesh_utils import write_obj
    from .ops import TreeField

    ckpt = load_checkpoint(args.checkpoint)
    mesh = extract(TreeField.from_checkpoint(ckpt),
                   GridSpec(resolution=args.res, isovalue=args.iso))
    write_obj(args.output, mesh.vertices, mesh.triangles, mesh.normals)
    print(f"wrote {args.output}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
    return 0


def _cmd_eval(args) -> int:
    from .brep_io import load_brep, normalize
    from .checkpoint import load_checkpoint
    from .isosurface import GridSpec, extract
    from .metrics import MetricsReport, evaluate_conversion
    from .ops import TreeField

    ckpt = load_checkpoint(args.checkpoint)
    truth, _ = normalize(load_brep(args.truth))
    fld = TreeField.from_checkpoint(ckpt)
    mesh_e = extract(fld, GridSpec(resolution=args.res))
    report = evaluate_conversion(mesh_e, fld, truth, seed=args.seed)
    lines = f"{MetricsReport.CSV_HEADER}\n{report.csv_row()}\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(lines)
    print(lines, end="")
    return 0


def _cmd_query(args) -> int:
    import numpy as np

    from .checkpoint import load_checkpoint
    from .ops import op_query

    if args.points:
        pts = np.loadtxt(args.points, dtype=float).reshape(-1, 3)
    else:
        if not args.point or len(args.point) % 3:
            raise SystemExit("provide x y z triples or --points FILE")
        pts = np.array(args.point, dtype=float).reshape(-1, 3)
    vals, signs = op_query(load_checkpoint(args.checkpoint), pts)
    for p, v, s in zip(pts, vals, signs):
        tag = "inside" if s < 0 else ("outside" if s > 0 else "surface")
        print(f"{p[0]} {p[1]} {p[2]} {v!r} {tag}")
    return 0


def _cmd_boolean(args) -> int:
    from .checkpoint import load_checkpoint
    from .isosurface import GridSpec, extract
    from .mesh_utils import write_obj
    from .ops import op_boolean

    combined = op_boolean(load_checkpoint(args.a), load_checkpoint(args.b), args.op)
    mesh = extract(combined, GridSpec(resolution=args.res))
    write_obj(args.output, mesh.vertices, mesh.triangles, mesh.normals)
    print(f"wrote {args.output}: {len(mesh.triangles)} triangles ({args.op})")
    return 0


def _cmd_offset(args) -> int:
    from .checkpoint import load_checkpoint
    from .isosurface import GridSpec
    from .mesh_utils import write_obj
    from .ops import op_offset

    mesh = op_offset(load_checkpoint(args.checkpoint), args.iso,
                     GridSpec(resolution=args.res))
    write_obj(args.output, mesh.vertices, mesh.triangles, mesh.normals)
    print(f"wrote {args.output}: isovalue {args.iso}, {len(mesh.triangles)} triangles")
    return 0


def _cmd_blend(args) -> int:
    from .checkpoint import load_checkpoint
    from .isosurface import GridSpec, extract
    from .mesh_utils import write_obj
    from .ops import BlendConfig, op_blend

    blended = op_blend(load_checkpoint(args.checkpoint), BlendConfig(rho=args.rho))
    mesh = extract(blended, GridSpec(resolution=args.res))
    write_obj(args.output, mesh.vertices, mesh.triangles, mesh.normals)
    print(f"wrote {args.output}: rho {args.rho}, {len(mesh.triangles)} triangles")
    return 0


def _cmd_inspect(args) -> int:
    from .boolean_tree import construct_tree, serialize_tree
    from .brep_io import load_brep, normalize
    from .patch_graph import build_patch_graph, merge_smooth_patches

    mesh = load_brep(args.mesh)
    mesh, _ = normalize(mesh)
    graph = build_patch_graph(mesh)
    if args.merge_smooth:
        graph, mesh = merge_smooth_patches(graph, mesh)
    print(graph.dump())
    res = construct_tree(graph, mesh)
    for note in res.notes:
        print(f"note: {note}")
    print(f"tree: {serialize_tree(res.tree)}")
    return 0


_COMMANDS = {
    "convert": _cmd_convert,
    "extract": _cmd_extract,
    "eval": _cmd_eval,
    "query": _cmd_query,
    "boolean": _cmd_boolean,
    "offset": _cmd_offset,
    "blend": _cmd_blend,
    "inspect": _cmd_inspect,
}


def main(argv=None) -> int:
    _apply_thread_cap()
    args = build_parser().parse_args(argv)
    from .errors import NHRepError

    try:
        return _COMMANDS[args.command](args)
    except NHRepError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
