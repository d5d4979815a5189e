"""Command-line pipeline: synth -> preprocess -> pretrain -> train ->
generate / translate / evaluate.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure (NaN abort).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation, generation, io, pipeline
from .errors import DataFormatError, NonFiniteError, NumericalError
from .geometry import load_obj, save_obj
from .model import NetConfig
from .synthetic import synth_dataset
from .training import (PairedDataset, TrainConfig, pretrain_discriminator,
                       reconstruction_l1, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _net_config(cfg: dict[str, str], resolution: int, labels: int) -> NetConfig:
    skips = cfg.get("skip_levels", "16,8").strip()
    skip_levels = tuple(int(s) for s in skips.split(",") if s) if skips else ()
    return NetConfig(
        resolution=resolution,
        base_filters=int(cfg.get("filters", 16)),
        latent_dim=int(cfg.get("latent", 16)),
        label_channels=labels,
        skip_levels=skip_levels,
    )


def _train_config(cfg: dict[str, str], seed: int | None) -> TrainConfig:
    kw = {}
    for key, cast in [("lambda_adv", float), ("lambda_rec", float), ("lr", float),
                      ("lr_decay", float), ("lr_decay_every", int),
                      ("lr_decay_mode", str), ("pretrain_batch", int),
                      ("pretrain_epochs", int), ("batch", int), ("epochs", int),
                      ("seed", int), ("checkpoint_every", int)]:
        if key in cfg:
            kw[key] = cast(cfg[key])
    if seed is not None:
        kw["seed"] = seed
    return TrainConfig(**kw)


def cmd_synth(args) -> int:
    ds = synth_dataset(args.subjects, args.modes, noise=args.noise,
                       labels=args.labels, seed=args.seed, grid=args.grid,
                       amplitude=args.amplitude)
    pipeline.write_raw_dataset(args.out, ds)
    print(f"wrote {args.subjects} subjects to {args.out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    meta = pipeline.preprocess(args.in_dir, args.template, args.landmarks,
                               args.res, args.out, seed=args.seed,
                               layout_path=args.layout)
    print(f"preprocessed {len(meta['subjects'])} subjects "
          f"({len(meta['train'])} train / {len(meta['test'])} test) at {args.res}x{args.res}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    data = pipeline.load_paired_datasets(args.data)
    cfg = io.load_config_file(args.config) if args.config else {}
    tcfg = _train_config(cfg, args.seed)
    ncfg = _net_config(cfg, data["train"].resolution, data["train"].num_label_channels)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    def save_ck(epoch, network, state):
        if (tcfg.checkpoint_every and epoch % tcfg.checkpoint_every == 0) \
                or epoch == tcfg.pretrain_epochs:
            io.save_checkpoint(out, network, adam=state.adam_d,
                               rng_state=state.rng_state, epoch=epoch)

    if args.resume:
        net, meta = io.load_checkpoint(args.resume)
        state = io.load_train_state(meta)
        net, history = pretrain_discriminator(data["train"], ncfg, tcfg,
                                              network=net, state=state,
                                              checkpoint_fn=save_ck)
    else:
        net, history = pretrain_discriminator(data["train"], ncfg, tcfg,
                                              checkpoint_fn=save_ck)
    io.save_checkpoint(out, net)
    io.write_loss_csv(out.with_suffix(".loss.csv"), history, pretrain=True)
    print(f"pretrained {tcfg.pretrain_epochs} epochs, final loss {history[-1]:.6f}")
    return EXIT_OK


def cmd_train(args) -> int:
    data = pipeline.load_paired_datasets(args.data)
    cfg = io.load_config_file(args.config) if args.config else {}
    tcfg = _train_config(cfg, args.seed)
    ncfg = _net_config(cfg, data["train"].resolution, data["train"].num_label_channels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    pretrained = None
    if args.pretrained:
        pretrained, _ = io.load_checkpoint(args.pretrained)

    def save_pre(epoch, network, state):
        if tcfg.checkpoint_every and epoch % tcfg.checkpoint_every == 0:
            io.save_checkpoint(out / "pretrain.ckpt", network, adam=state.adam_d,
                               rng_state=state.rng_state, epoch=epoch)

    def save_adv(epoch, d_net, g_net, state):
        io.save_checkpoint(out / f"d_{epoch:05d}.ckpt", d_net, adam=state.adam_d,
                           rng_state=state.rng_state, epoch=epoch)
        io.save_checkpoint(out / f"g_{epoch:05d}.ckpt", g_net, adam=state.adam_g,
                           epoch=epoch)

    resume = None
    if args.resume:
        pairs = sorted(Path(args.resume).glob("d_*.ckpt"))
        if not pairs:
            raise FileNotFoundError(f"no adversarial checkpoints in {args.resume}")
        d_path = pairs[-1]
        g_path = d_path.with_name("g" + d_path.name[1:])
        d_net, d_meta = io.load_checkpoint(d_path)
        g_net, g_meta = io.load_checkpoint(g_path)
        resume = (d_net, g_net, io.load_train_state(d_meta, g_meta))

    result = train(data["train"], ncfg, tcfg, pretrained=pretrained,
                   pretrain_checkpoint_fn=save_pre, checkpoint_fn=save_adv,
                   resume=resume)
    io.save_checkpoint(out / "discriminator.ckpt", result.discriminator)
    io.save_checkpoint(out / "generator.ckpt", result.generator)
    if result.pretrained is not None:
        io.save_checkpoint(out / "pretrained.ckpt", result.pretrained)
    if result.pretrain_history:
        io.write_loss_csv(out / "pretrain_loss.csv", result.pretrain_history, pretrain=True)
    io.write_loss_csv(out / "loss.csv", result.history)
    test_l1 = reconstruction_l1(result.generator, data["test"]) if len(data["test"]) else float("nan")
    print(f"trained; final test reconstruction L1 = {test_l1:.6f}")
    return EXIT_OK


def _load_gaussian_for(args, net, data_dir):
    if args.gaussian and Path(args.gaussian).exists():
        gs = io.load_gaussians(args.gaussian)
    else:
        data = pipeline.load_paired_datasets(data_dir)
        train_ds = data["train"]
        if train_ds.labels is not None:
            per = generation.fit_label_gaussians(
                net, train_ds.x, train_ds.labels, data["meta"]["label_names"])
            gs = list(per.values())
        else:
            Z = generation.collect_bottlenecks(net, train_ds.x)
            gs = [generation.fit_latent_gaussian(Z)]
        if args.gaussian:
            io.save_gaussians(args.gaussian, gs)
    return gs


def cmd_generate(args) -> int:
    net, _ = io.load_checkpoint(args.model)
    data_dir = Path(args.data)
    meta = pipeline.load_meta(data_dir)
    layout = io.load_layout(data_dir / "layout.uvl")
    gs = _load_gaussian_for(args, net, data_dir)
    if args.label:
        match = [g for g in gs if g.label == args.label]
        if not match:
            raise DataFormatError(f"no gaussian for label {args.label!r}")
        g = match[0]
    else:
        g = gs[0]
    rng = np.random.default_rng(args.seed)
    zs = generation.sample_latent(g, rng, n=args.n)
    maps = generation.decode_batch(net, zs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scale = meta["scale"]
    for i in range(args.n):
        from .geometry import UVMap, sample_mesh_from_uv
        uvm = UVMap(maps[i], np.ones(maps[i].shape[1:], dtype=bool), filled=True)
        mesh = sample_mesh_from_uv(uvm, layout, meta["landmarks"])
        save_obj(out / f"gen_{i:05d}.obj", mesh.with_vertices(mesh.vertices * scale))
    print(f"generated {args.n} meshes in {out}")
    return EXIT_OK


def cmd_translate(args) -> int:
    net, _ = io.load_checkpoint(args.model)
    data_dir = Path(args.in_dir)
    meta = pipeline.load_meta(data_dir)
    layout = io.load_layout(data_dir / "layout.uvl")
    label_names = meta["label_names"]
    onehot = None
    if args.label:
        if args.label not in label_names:
            raise DataFormatError(f"unknown label {args.label!r}; have {label_names}")
        onehot = np.zeros(len(label_names), dtype=np.float32)
        onehot[label_names.index(args.label)] = 1.0
    stems = meta[args.split] if args.split in ("train", "test") else meta["subjects"]
    use_noisy = bool(meta["noisy"]) and not label_names
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from .geometry import UVMap, sample_mesh_from_uv
    for stem in stems:
        key = f"{stem}.noisy" if use_noisy else stem
        uvm = io.load_uvmap(data_dir / "maps" / f"{key}.uvf")
        result = pipeline.translate_map(net, uvm.data, onehot)
        m2 = UVMap(result, np.ones(result.shape[1:], dtype=bool), filled=True)
        mesh = sample_mesh_from_uv(m2, layout, meta["landmarks"])
        save_obj(out / f"{stem}.obj", mesh.with_vertices(mesh.vertices * meta["scale"]))
    print(f"translated {len(stems)} meshes into {out}")
    return EXIT_OK


def _represent_summary(errs, args, seed):
    curve, auc, fr = evaluation.ced_auc_fr(errs, args.x_max, args.fail_threshold)
    return {
        "metric": "generalization",
        "mean": errs.mean, "std": errs.std, "auc": auc, "fr": fr,
        "x_max": args.x_max, "threshold": args.fail_threshold, "seed": seed,
    }, curve


def cmd_evaluate(args) -> int:
    data_dir = Path(args.data)
    meta = pipeline.load_meta(data_dir)
    layout = io.load_layout(data_dir / "layout.uvl")
    landmarks = meta["landmarks"]
    test_meshes = pipeline.load_aligned_meshes(data_dir, meta["test"], landmarks)
    out = Path(args.out)

    if args.task == "represent":
        if args.model == "identity":
            rec = lambda mesh: mesh
        else:
            net, _ = io.load_checkpoint(args.model)
            rec = pipeline.gan_reconstructor(net, layout, meta["resolution"], landmarks)
        errs = evaluation.generalization_errors(rec, test_meshes)
        summary, curve = _represent_summary(errs, args, args.seed)
        io.write_metric_report(out, "represent", summary, curve)
        if args.pca_k or args.pca_var:
            from .pca import pca_fit, pca_reconstruct
            train_meshes = pipeline.load_aligned_meshes(data_dir, meta["train"], landmarks)
            model = pca_fit(train_meshes, variance_target=args.pca_var or 0.98,
                            n_components=args.pca_k)
            perr = evaluation.generalization_errors(
                lambda m: pca_reconstruct(model, m), test_meshes)
            psummary, pcurve = _represent_summary(perr, args, args.seed)
            psummary["metric"] = "generalization_pca"
            psummary["pca_components"] = model.num_components
            io.write_metric_report(out, "represent_pca", psummary, pcurve)
        print(json.dumps(summary, sort_keys=True))
        return EXIT_OK

    if args.task == "translate":
        net, _ = io.load_checkpoint(args.model)
        preds, identities = [], []
        for stem in meta["test"]:
            noisy = io.load_uvmap(data_dir / "maps" / f"{stem}.noisy.uvf")
            result = pipeline.translate_map(net, noisy.data)
            from .geometry import UVMap, sample_mesh_from_uv
            m2 = UVMap(result, np.ones(result.shape[1:], dtype=bool), filled=True)
            preds.append(sample_mesh_from_uv(m2, layout, landmarks))
            identities.append(load_obj(data_dir / "aligned" / f"{stem}.noisy.obj", landmarks))
        gts = test_meshes
        model_rmse = [evaluation.rmse3d_translation(p, g, crop_radius=args.crop_radius)
                      for p, g in zip(preds, gts)]
        ident_rmse = [evaluation.rmse3d_translation(p, g, crop_radius=args.crop_radius)
                      for p, g in zip(identities, gts)]
        errs = evaluation.ErrorDistribution(np.asarray(model_rmse))
        curve, auc, fr = evaluation.ced_auc_fr(errs, args.x_max, args.fail_threshold)
        summary = {
            "metric": "rmse3d_translation",
            "mean": errs.mean, "std": errs.std, "auc": auc, "fr": fr,
            "x_max": args.x_max, "threshold": args.fail_threshold,
            "seed": args.seed,
            "identity_mean": float(np.mean(ident_rmse)),
        }
        io.write_metric_report(out, "translate", summary, curve)
        print(json.dumps(summary, sort_keys=True))
        return EXIT_OK

    # specificity
    net, _ = io.load_checkpoint(args.model)
    gs = _load_gaussian_for(args, net, data_dir)
    g = gs[0] if not args.label else next(x for x in gs if x.label == args.label)
    rng = np.random.default_rng(args.seed)
    zs = generation.sample_latent(g, rng, n=args.n)
    maps = generation.decode_batch(net, zs)
    from .geometry import UVMap, sample_mesh_from_uv

    def sample_fn(i):
        uvm = UVMap(maps[i], np.ones(maps[i].shape[1:], dtype=bool), filled=True)
        return sample_mesh_from_uv(uvm, layout, landmarks)

    mean, std, _ = evaluation.specificity(sample_fn, test_meshes, n_samples=args.n)
    summary = {"metric": "specificity", "mean": mean, "std": std,
               "auc": None, "fr": None, "x_max": None, "threshold": None,
               "seed": args.seed, "n": args.n}
    io.write_metric_report(out, "specificity", summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="facegan3d", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic raw dataset")
    s.add_argument("--subjects", type=int, required=True)
    s.add_argument("--modes", type=int, default=8)
    s.add_argument("--noise", type=float, default=0.0)
    s.add_argument("--labels", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", type=int, default=45)
    s.add_argument("--amplitude", type=float, default=0.12)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("preprocess", help="align, normalize and rasterize")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--template", required=True)
    s.add_argument("--landmarks", required=True)
    s.add_argument("--res", type=int, default=32)
    s.add_argument("--layout", default=None, help="precomputed layout override")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_preprocess)

    s = sub.add_parser("pretrain", help="pretrain the discriminator autoencoder")
    s.add_argument("--data", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--resume", default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_pretrain)

    s = sub.add_parser("train", help="full two-phase training")
    s.add_argument("--data", required=True)
    s.add_argument("--pretrained", default=None)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--resume", default=None, help="directory with d_/g_ checkpoints")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("generate", help="sample new faces from the latent gaussian")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--gaussian", default=None)
    s.add_argument("--label", default=None)
    s.add_argument("--n", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_generate)

    s = sub.add_parser("translate", help="run inputs through the generator")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--label", default=None)
    s.add_argument("--split", default="all", choices=["train", "test", "all"])
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_translate)

    s = sub.add_parser("evaluate", help="compute the quantitative metrics")
    s.add_argument("--task", required=True, choices=["represent", "translate", "specificity"])
    s.add_argument("--data", required=True)
    s.add_argument("--model", required=True,
                   help="checkpoint path, or 'identity' for the pass-through model")
    s.add_argument("--gaussian", default=None)
    s.add_argument("--label", default=None)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--x-max", type=float, default=0.01)
    s.add_argument("--fail-threshold", type=float, default=0.01)
    s.add_argument("--crop-radius", type=float, default=150.0)
    s.add_argument("--pca-k", type=int, default=None)
    s.add_argument("--pca-var", type=float, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except DataFormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, NonFiniteError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
