"""Command-line entry point: ``handrecon <subcommand> ...``.

Exit codes: 0 success, 1 domain error (bad data, failed training, empty
inputs), 2 usage error (argparse).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import benchmark
from .config import Config, ConfigError, load_config

log = logging.getLogger("handrecon")


class DomainError(RuntimeError):
    pass


def _load_codecs(paths: list[str]) -> dict:
    from .codec import load_codec

    codecs = {}
    for p in paths:
        model = load_codec(p)
        codecs[model.role] = model
    missing = {"hand", "object"} - set(codecs)
    if missing:
        raise DomainError(f"--codecs is missing a checkpoint for {sorted(missing)}")
    return codecs


def _read_view(path: str):
    """Observation file ``<scene>/obs_<V>.ppm``; masks and cameras come from the same scene directory."""
    from .synth.dataset import VIEWS, read_scene

    p = Path(path)
    view = p.stem.rsplit("_", 1)[-1]
    if view not in VIEWS:
        raise DomainError(f"{path}: expected an obs_L.ppm or obs_R.ppm file from a scene directory")
    return read_scene(p.parent), VIEWS.index(view)


def _out_file(path: str) -> str:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return path


def cmd_gen_data(args, cfg: Config) -> None:
    from .synth.dataset import write_scene
    from .synth.scene import generate_scene

    if args.n < 1:
        raise DomainError("--n must be at least 1")
    for i in range(args.n):
        path = write_scene(generate_scene(cfg.seed + i, cfg.scene), args.out)
        log.info("wrote %s", path)


def _scenes(data: str):
    from .synth.dataset import list_scenes, read_scene

    paths = list_scenes(data)
    if not paths:
        raise DomainError(f"{data}: no scenes found")
    return [read_scene(p) for p in paths]


def cmd_train_codec(args, cfg: Config) -> None:
    from .codec import save_codec, train_codec

    cfg = cfg.override("codec", epochs=args.epochs, seed=cfg.seed)
    scenes = _scenes(args.data)
    grids = [s.gt_tsdf_hand if args.cls == "hand" else s.gt_tsdf_object for s in scenes]
    model = train_codec(grids, cfg.codec, role=args.cls)
    save_codec(model, _out_file(args.out))
    log.info("codec %s: %d codes used after %d epochs", args.cls, model.log[-1]["codes_used"], len(model.log))


def cmd_train_encoder(args, cfg: Config) -> None:
    from .codec import encode, load_codec
    from .encoder import save_encoder, train_encoder

    cfg = cfg.override("encoder", epochs=args.epochs, seed=cfg.seed)
    codecs = {"hand": load_codec(args.codec_hand), "object": load_codec(args.codec_object)}
    for role, model in codecs.items():
        if model.role != role:
            raise DomainError(f"--codec-{role} holds a {model.role} codec")
    data = []
    for s in _scenes(args.data):
        th = encode(codecs["hand"], s.gt_tsdf_hand)[1]
        to = encode(codecs["object"], s.gt_tsdf_object)[1]
        data.extend((obs, th, to) for obs in s.observations)
    save_encoder(train_encoder(data, codecs, cfg.encoder), _out_file(args.out))


def cmd_reconstruct(args, cfg: Config) -> None:
    from .encoder import load_encoder, predict_distribution
    from .fusion import fuse_distributions, occlusion_aware_mask, reconstruct, remove_outliers
    from .geometry import write_ply, write_tsdf

    encoder = load_encoder(args.encoder)
    codecs = _load_codecs(args.codecs)
    (scene_l, i_l), (scene_r, i_r) = _read_view(args.obs_left), _read_view(args.obs_right)
    obs_l, obs_r = scene_l.observations[i_l], scene_r.observations[i_r]
    h_l, o_l = predict_distribution(encoder, obs_l)
    h_r, o_r = predict_distribution(encoder, obs_r)
    rec = reconstruct(fuse_distributions(h_l, h_r).distribution, fuse_distributions(o_l, o_r).distribution,
                      codecs, obs_l.wrist_pose)
    cams = {"L": scene_l.cameras[i_l], "R": scene_r.cameras[i_r]}
    masks_l, masks_r = scene_l.gt_masks[i_l], scene_r.gt_masks[i_r]
    views = {"L": masks_l, "R": masks_r}
    hand, _ = remove_outliers(rec.hand, {v: occlusion_aware_mask(h, o) for v, (h, o) in views.items()}, cams)
    obj, _ = remove_outliers(rec.object, {v: occlusion_aware_mask(o, h) for v, (h, o) in views.items()}, cams)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ply([hand, obj], out / "reconstruction.ply")
    write_tsdf(rec.tsdf_hand, out / "hand.tsdf")
    write_tsdf(rec.tsdf_object, out / "object.tsdf")
    log.info("reconstructed %d hand and %d object points", len(hand), len(obj))


def cmd_simulate(args, cfg: Config) -> None:
    from .handover import LearnedReconstructor, OracleReconstructor, run_episode, write_trace
    from .handover.pipeline import oracle_frames
    from .synth.dataset import read_scene

    if args.robot:
        cfg = dataclasses.replace(cfg, robot=load_config(args.robot).robot)
    scene = read_scene(args.scene)
    if args.oracle:
        reconstructor = OracleReconstructor(scene)
    else:
        if not args.encoder or not args.codecs:
            raise DomainError("--encoder and --codecs are required unless --oracle is given")
        from .encoder import load_encoder

        reconstructor = LearnedReconstructor(load_encoder(args.encoder), _load_codecs(args.codecs))
    result, trace = run_episode(scene, reconstructor, cfg.robot, cfg.pipeline,
                                frames=oracle_frames(scene, cfg.noise, cfg.scene), seed=cfg.seed,
                                object_id=args.object_id)
    write_trace(trace, result, _out_file(args.trace))
    log.info("episode %s: delivered=%s held=%s", result.object_id, result.delivered, result.grasp_held)


def cmd_evaluate(args, cfg: Config) -> None:
    from .handover import read_trace

    paths = sorted(Path(args.traces).glob("*.jsonl")) if Path(args.traces).is_dir() else []
    if not paths:
        raise DomainError(f"{args.traces}: no trace files (*.jsonl)")
    results = [read_trace(p)[1] for p in paths]
    report = benchmark.aggregate(results, cfg.score)
    benchmark.write_report(report, _out_file(args.out))
    log.info("scored %d episodes into %s", len(results), args.out)


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # subcommands suppress their defaults so flags given before the subcommand survive
        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--config", default=default, help="INI config file")
        g.add_argument("--seed", type=int, default=default, help="master seed (overrides [run] seed)")
        g.add_argument("--verbose", "-v", action="store_true", default=default or False)
        return g

    common = global_flags(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(prog="handrecon", parents=[global_flags(None)],
                                     description="Stereo hand-object reconstruction and handover simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write synthetic scenes")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-codec", parents=[common], help="train a shape codec")
    p.add_argument("--class", dest="cls", choices=("hand", "object"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_codec)

    p = sub.add_parser("train-encoder", parents=[common], help="train the view encoder")
    p.add_argument("--codec-hand", required=True)
    p.add_argument("--codec-object", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("reconstruct", parents=[common], help="stereo reconstruction of one frame")
    p.add_argument("--obs-left", required=True)
    p.add_argument("--obs-right", required=True)
    p.add_argument("--encoder", required=True)
    p.add_argument("--codecs", nargs=2, required=True, metavar="CKPT")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("simulate-handover", parents=[common], help="run one handover episode")
    p.add_argument("--scene", required=True)
    p.add_argument("--encoder")
    p.add_argument("--codecs", nargs=2, metavar="CKPT")
    p.add_argument("--oracle", action="store_true", help="use ground-truth shapes instead of the networks")
    p.add_argument("--robot", help="INI file whose [robot] section overrides the robot setup")
    p.add_argument("--object-id")
    p.add_argument("--trace", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", parents=[common], help="score traces into a report")
    p.add_argument("--traces", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_seed(args.seed)
        args.func(args, cfg)
    except (DomainError, ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"handrecon {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
