"""Command-line surface tying the modules into reproducible runs.

Subcommands: gen | net | beta | ccbp-check | param | regularity.
Every JSON artifact embeds the full run configuration and a content hash of
its inputs; identical config + input hash reproduces identical bytes.

Exit codes: 0 ok, 2 config error, 3 input error, 4 flatness-check abort.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import beta as beta_mod
from . import ccbp as ccbp_mod
from .cloud import InputError, PointCloud, ingest, write_binary, write_csv
from .config import ConfigError, RunConfig, content_hash, dump_artifact, load_config
from .diagnostics import PipelineConfig, predict_and_verify
from .generators import (
    Ball,
    CantorSpec,
    HaarGraphSpec,
    SnowflakeSpec,
    angle_sequence,
    cantor_c1s,
    graph_fixtures,
    haar_graph,
    punch_holes,
    snowflake,
)
from .nets import build_net
from .parametrization import distortion_report, export_mesh_csv, export_mesh_obj, surface_mesh

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INPUT = 3
EXIT_FLATNESS = 4


def _fail(code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": message, "code": code}) + "\n")
    return code


def _add_common(p):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--input", help="input cloud (CSV or binary)")
    p.add_argument("--format", default="csv", choices=["csv", "binary"])
    p.add_argument("--out", help="output path prefix", default="betaflow_out")
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--k", type=int, dest="K")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)


def _config_from(args) -> RunConfig:
    overrides = {
        k: getattr(args, k, None)
        for k in (
            "d",
            "n",
            "eps",
            "alpha",
            "gamma",
            "K",
            "samples",
            "seed",
            "input",
        )
    }
    return load_config(getattr(args, "config", None), overrides)


def _load_cloud(args, cfg: RunConfig) -> tuple[PointCloud, str]:
    if not cfg.input:
        raise InputError("no input cloud given (use --input)")
    cloud = ingest(cfg.input, args.format, cfg.d)
    return cloud, content_hash(cfg.input)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="betaflow")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate fixture clouds")
    p_gen.add_argument("kind", choices=["snowflake", "haar", "cantor", "lipschitz", "smooth", "plane"])
    p_gen.add_argument("--alpha-seq", default="geometric:0.5", help="snowflake angle sequence")
    p_gen.add_argument("--alpha", type=float, default=0.5)
    p_gen.add_argument("--depth", type=int, default=8)
    p_gen.add_argument("--grid", type=int, default=4096)
    p_gen.add_argument("--amplitude", type=float, default=0.1)
    p_gen.add_argument("--samples-per-segment", type=int, default=2)
    p_gen.add_argument("--points", type=int, default=10000)
    p_gen.add_argument("--log-coeff", type=float, default=None,
                       help="haar: use level coefficients 2^-j j^-p with this p")
    p_gen.add_argument("--hole", action="append", default=[],
                       help="center,...,radius: punch a ball out of the result")
    p_gen.add_argument("--out", default="betaflow_cloud")
    p_gen.add_argument("--binary", action="store_true")

    for name in ("net", "beta", "ccbp-check", "param", "regularity"):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "beta":
            p.add_argument("--p", default="sup", choices=["sup", "l1", "l2"])
            p.add_argument("--points", type=int, default=32, help="query points sampled from the cloud")
        if name == "param":
            p.add_argument("--grid", type=int, default=512)

    args = parser.parse_args(argv)
    try:
        if args.command == "gen":
            return _cmd_gen(args)
        cfg = _config_from(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except InputError as exc:
        return _fail(EXIT_INPUT, str(exc))

    try:
        cloud, in_hash = _load_cloud(args, cfg)
    except (InputError, FileNotFoundError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))

    try:
        if args.command == "net":
            return _cmd_net(args, cfg, cloud, in_hash)
        if args.command == "beta":
            return _cmd_beta(args, cfg, cloud, in_hash)
        if args.command == "ccbp-check":
            return _cmd_ccbp(args, cfg, cloud, in_hash)
        if args.command == "param":
            return _cmd_param(args, cfg, cloud, in_hash)
        if args.command == "regularity":
            return _cmd_regularity(args, cfg, cloud, in_hash)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except InputError as exc:
        return _fail(EXIT_INPUT, str(exc))
    raise AssertionError("unreachable")


def _cmd_gen(args) -> int:
    kind = args.kind
    if kind == "snowflake":
        angles = angle_sequence(args.alpha_seq, args.depth)
        cloud, _, diag = snowflake(
            SnowflakeSpec(angles, args.depth, args.samples_per_segment)
        )
        meta = {"kind": kind, "alpha_seq": args.alpha_seq, "depth": args.depth, "diagnostics": diag}
    elif kind == "haar":
        coeffs = None
        if args.log_coeff is not None:
            coeffs = [2.0**-j * j**-args.log_coeff for j in range(1, args.depth + 1)]
        cloud, _, meta = haar_graph(
            HaarGraphSpec(args.alpha, args.depth, args.grid, args.amplitude, coeffs)
        )
        meta = {"kind": kind, **meta}
    elif kind == "cantor":
        a_seq = [4.0 ** -(j + 1) for j in range(args.depth)]
        cloud, _, meta = cantor_c1s(CantorSpec(args.alpha, a_seq, args.depth, args.grid))
        meta = {"kind": kind, **meta}
    elif kind in ("lipschitz", "smooth"):
        params = {"points": args.grid, "amplitude": args.amplitude}
        if kind == "smooth":
            cloud = graph_fixtures("c1alpha", {**params, "style": "smooth"})
        else:
            cloud = graph_fixtures("lipschitz", params)
        meta = {"kind": kind, "params": params}
    else:  # plane
        side = int(np.sqrt(args.points))
        g = np.linspace(-0.7, 0.7, side)
        mg = np.meshgrid(g, g, indexing="ij")
        pts = np.column_stack([mg[0].ravel(), mg[1].ravel(), np.zeros(side * side)])
        cloud = PointCloud(pts, d=2, metadata={"generator": "plane"})
        meta = {"kind": kind, "points": side * side}

    if args.hole:
        holes = []
        for spec in args.hole:
            vals = [float(t) for t in spec.split(",")]
            holes.append(Ball(np.array(vals[:-1]), vals[-1]))
        cloud = punch_holes(cloud, holes)
        meta["holes"] = [h for h in cloud.metadata.get("holes", [])]

    if args.binary:
        data_path = args.out + ".bin"
        write_binary(data_path, cloud)
    else:
        data_path = args.out + ".csv"
        write_csv(data_path, cloud)
    dump_artifact(
        args.out + ".json",
        {
            "schema_version": "betaflow.gen.v1",
            "meta": meta,
            "points": len(cloud),
            "n": cloud.n,
            "d": cloud.d,
            "data": data_path,
            "content_hash": content_hash(data_path),
        },
    )
    return EXIT_OK


def _cmd_net(args, cfg, cloud, in_hash) -> int:
    net = build_net(cloud, cfg.K)
    dump_artifact(
        args.out + ".net.json",
        {
            "schema_version": "betaflow.net.v1",
            "config": cfg.to_dict(),
            "input_hash": in_hash,
            "scales": [
                {"k": sc.k, "r": sc.r, "indices": sc.indices.tolist()} for sc in net.scales
            ],
        },
    )
    return EXIT_OK


def _cmd_beta(args, cfg, cloud, in_hash) -> int:
    net = build_net(cloud, cfg.K)
    stride = max(len(cloud) // args.points, 1)
    queries = cloud.points[::stride][: args.points]
    rows = []
    jones_rows = []
    for x in queries:
        for k in range(cfg.K + 1):
            rec = beta_mod.beta(cloud, net, x, k, args.p)
            rows.append((*x.tolist(), k, args.p, rec.value))
        jr = beta_mod.jones(cloud, net, x, cfg.alpha, args.p, cfg.K, cfg.gamma)
        jones_rows.append(
            {"x": x.tolist(), "value": jr.value, "terms": jr.terms, "scales": jr.scales}
        )
    csv_path = args.out + ".beta.csv"
    with open(csv_path, "w") as fh:
        coords = ",".join(f"x{i}" for i in range(cloud.n))
        fh.write(f"{coords},k,p,value\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")
    dump_artifact(
        args.out + ".beta.json",
        {
            "schema_version": "betaflow.beta.v1",
            "config": cfg.to_dict(),
            "input_hash": in_hash,
            "objective": args.p,
            "records": [
                {"x": list(r[: cloud.n]), "k": r[cloud.n], "p": r[cloud.n + 1], "value": r[cloud.n + 2]}
                for r in rows
            ],
            "jones": jones_rows,
        },
    )
    return EXIT_OK


def _cmd_ccbp(args, cfg, cloud, in_hash) -> int:
    net = build_net(cloud, cfg.K)
    cc = ccbp_mod.assemble(cloud, net, cfg.eps, cfg.fit_radius_mult, cfg.eps_max, cfg.samples)
    report = ccbp_mod.validate(cc, cloud)
    ccbp_mod.save_ccbp(args.out + ".ccbp.json", cc, defects=report.to_dict())
    dump_artifact(
        args.out + ".coherence.json",
        {
            "schema_version": "betaflow.coherence.v1",
            "config": cfg.to_dict(),
            "input_hash": in_hash,
            **report.to_dict(),
        },
    )
    return EXIT_OK


def _cmd_param(args, cfg, cloud, in_hash) -> int:
    net = build_net(cloud, cfg.K)
    cc = ccbp_mod.assemble(cloud, net, cfg.eps, cfg.fit_radius_mult, cfg.eps_max, cfg.samples)
    kmax = min(cfg.K, beta_mod.scale_floor(cloud, cfg.K))
    proj = (cloud.points - cc.sigma0.base) @ cc.sigma0.frame.T
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    if cloud.d == 1:
        grid = (float(lo[0]), float(hi[0]), args.grid)
    else:
        side = max(int(np.sqrt(args.grid)), 8)
        grid = ((float(lo[0]), float(hi[0]), side), (float(lo[1]), float(hi[1]), side))
    mesh = surface_mesh(cc, grid, kmax)
    if cloud.d == 1:
        export_mesh_csv(args.out + ".mesh.csv", mesh)
    else:
        export_mesh_obj(args.out + ".mesh.obj", mesh)
    rng = np.random.default_rng(cfg.seed)
    zs = cc.sigma0.base + ((lo + hi) / 2 + (hi - lo) * 0.4 * rng.uniform(-1, 1, size=(16, cloud.d))) @ cc.sigma0.frame
    report = distortion_report(cc, zs, kmax)
    dump_artifact(
        args.out + ".distortion.json",
        {
            "schema_version": "betaflow.distortion.v1",
            "config": cfg.to_dict(),
            "input_hash": in_hash,
            "K": kmax,
            "bounds": report,
        },
    )
    return EXIT_OK


def _cmd_regularity(args, cfg, cloud, in_hash) -> int:
    pipe = PipelineConfig(
        eps=cfg.eps,
        eps_max=cfg.eps_max,
        fit_radius_mult=cfg.fit_radius_mult,
        samples=cfg.samples,
        jones_samples=cfg.jones_samples,
        trace_samples=cfg.trace_samples,
        grid_points=cfg.grid_points,
        inverse_points=cfg.inverse_points,
        seed=cfg.seed,
    )
    bundle = predict_and_verify(cloud, cfg.alpha, cfg.K, pipe, cfg.gamma)
    dump_artifact(
        args.out + ".regularity.json",
        {
            "config": cfg.to_dict(),
            "input_hash": in_hash,
            **bundle.to_dict(),
        },
    )
    if bundle.aborted:
        return _fail(EXIT_FLATNESS, "one-sided flatness check failed; see report")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
