"""Command-line entry point: simulate, train, reconstruct, eval, bench.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import dataset, evalbench, msfcnn, plotting, rawio, training
from .config import RunConfig, load_config, write_effective
from .errors import ConfigurationError, DataError, MsfreconError
from .osem import osem_reconstruct
from .phantom import PHANTOM_KINDS, make_phantom
from .tomo_sim import Sinogram, default_angles, fbp

log = logging.getLogger("msfrecon")

METHODS = ("msfcnn", "osem", "fbp")


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ConfigurationError(f"{out} exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise ConfigurationError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_mix(text: str | None) -> dict | None:
    """``shepp_logan=1,hot_spots=2`` -> {"shepp_logan": 1.0, "hot_spots": 2.0}."""
    if text is None:
        return None
    mix = {}
    for part in text.split(","):
        kind, _, ratio = part.partition("=")
        try:
            mix[kind.strip()] = float(ratio) if ratio else 1.0
        except ValueError:
            raise ConfigurationError(f"bad mix entry {part!r}") from None
    return mix


def _load_model(path) -> msfcnn.Parameters:
    if path is None:
        raise ConfigurationError("this method needs --model FILE")
    if not Path(path).is_file():
        raise ConfigurationError(f"model file not found: {path}")
    return msfcnn.load_parameters(path)


# -- commands ---------------------------------------------------------------

def cmd_simulate(args, cfg: RunConfig) -> int:
    cfg = cfg.override("sim", n_records=args.n_records, size=args.size, counts=args.counts,
                       seed=args.seed, mix=_parse_mix(args.mix), n_angles=args.n_angles)
    out = _prepare_out(args.out, args.force)
    s = cfg.sim
    records = dataset.make_dataset(s.n_records, s.size, s.counts, s.mix, s.seed, s.n_angles,
                                   s.window)
    meta = {"size": s.size, "counts": s.counts, "seed": s.seed, "mix": s.mix,
            "n_angles": s.n_angles or dataset.default_n_angles(s.size), "window": s.window,
            "hash": dataset.dataset_hash(records)}
    dataset.save_dataset(records, out, meta)
    write_effective(cfg, out, "simulate", {})
    print(f"wrote {len(records)} records to {out} (sha256 {meta['hash'][:16]})")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    cfg = cfg.override("train", seed=args.seed, epochs=args.epochs, batch_size=args.batch_size,
                       learning_rate=args.learning_rate)
    records, _ = dataset.load_dataset(args.data)
    out = _prepare_out(args.out, args.force)
    write_effective(cfg, out, "train", {"data": str(args.data)})

    def progress(epoch, history):
        print(f"epoch {epoch}: train {history[-1]['train_loss']:.6g} "
              f"val {history[-1]['val_loss']:.6g}", flush=True)

    try:
        params, history = training.train(cfg.network, records, cfg.train,
                                         checkpoint_path=out / "checkpoint.msf", progress=progress)
    except training.TrainingDiverged as exc:
        if exc.params is not None:
            msfcnn.save_parameters(exc.params, out / "last_good.msf")
        training.write_history(exc.history, out / "loss.tsv")
        raise
    msfcnn.save_parameters(params, out / "model.msf", extra={"epochs": cfg.train.epochs})
    training.write_history(history, out / "loss.tsv")
    plotting.loss_curve(history, out / "loss.png")
    print(f"final validation MSE {history[-1]['val_loss']:.6g}; model {out / 'model.msf'}")
    return 0


def _reconstruct_one(method: str, sino: Sinogram, size: int, scale: float, cfg: RunConfig,
                     params=None, fbp_image=None, dtype=np.float64) -> np.ndarray:
    """Image in phantom units; ``scale`` converts counts to phantom units."""
    if method == "osem":
        return osem_reconstruct(sino, size, cfg.osem) * scale
    image = fbp(sino, size, cfg.sim.window) * scale if fbp_image is None else fbp_image
    if method == "fbp":
        return image
    return msfcnn.forward(params, image, dtype=dtype)


def cmd_reconstruct(args, cfg: RunConfig) -> int:
    cfg = cfg.override("sim", size=args.size, counts=args.counts, seed=args.seed,
                       n_angles=args.n_angles)
    params = _load_model(args.model) if args.method == "msfcnn" else None
    truth = None
    if args.sinogram is not None:
        data = rawio.read_image(args.sinogram)
        if data.shape[2] != 1:
            raise DataError(f"{args.sinogram}: a sinogram file has depth 1")
        sino = Sinogram(np.asarray(data[:, :, 0], dtype=np.float64),
                        default_angles(data.shape[0]))
        size, scale = cfg.sim.size, args.count_scale
    else:
        ph = make_phantom(args.phantom, cfg.sim.size, cfg.sim.seed)
        sino, _, scale = dataset.simulate(ph, cfg.sim.counts,
                                          cfg.sim.seed + dataset.NOISE_SEED_OFFSET,
                                          cfg.sim.n_angles, window=cfg.sim.window)
        size, truth = ph.size, ph.image
    if params is not None:
        msfcnn._check_divisible(params.spec, size, size)
    out = _prepare_out(args.out, args.force)
    image = _reconstruct_one(args.method, sino, size, scale, cfg, params)
    rawio.write_image(out / "recon.tsimg", image)
    if args.preview:
        rawio.write_pgm(out / "recon.pgm", np.clip(image, 0, None))
    panels = {args.method: image} if truth is None else {"truth": truth, args.method: image}
    plotting.image_panels(panels, out / "recon.png")
    write_effective(cfg, out, "reconstruct",
                    {"method": args.method, "model": args.model, "sinogram": args.sinogram,
                     "phantom": args.phantom, "count_scale": args.count_scale})
    print(f"wrote {out / 'recon.tsimg'} ({size}x{size})")
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    records, _ = dataset.load_dataset(args.data)
    params = _load_model(args.model) if args.method == "msfcnn" else None
    out = _prepare_out(args.out, args.force)
    recons = []
    for rec in records:
        if args.method == "truth":
            recons.append(rec.target)
        elif args.method == "osem":
            if rec.sinogram is None:
                raise DataError("osem evaluation needs stored sinograms")
            recons.append(_reconstruct_one("osem", rec.sinogram, rec.target.shape[0],
                                           rec.count_scale, cfg))
        else:
            recons.append(_reconstruct_one(args.method, rec.sinogram, rec.target.shape[0],
                                           rec.count_scale, cfg, params, fbp_image=rec.input))
    report = evalbench.evaluate(args.method, recons, records)
    (out / "report.json").write_text(report.to_json())
    evalbench.write_roi_table(report, out / "rois.tsv")
    if report.rois:
        plotting.roi_scatter(report, out / "roi_scatter.png")
    write_effective(cfg, out, "eval", {"method": args.method, "model": args.model,
                                       "data": str(args.data)})
    summ = report.summary()
    r = "undefined" if report.r is None else f"{report.r:.4f}"
    print(f"{args.method}: mean MSE {summ['mean_mse']:.6g}, mean PSNR {summ['mean_psnr']}, "
          f"ROI r {r}")
    return 0


def cmd_bench(args, cfg: RunConfig) -> int:
    cfg = cfg.override("bench", repetitions=args.repetitions)
    methods = tuple(args.methods.split(",")) if args.methods else cfg.bench.methods
    bad = set(methods) - set(METHODS)
    if bad:
        raise ConfigurationError(f"unknown bench methods: {sorted(bad)}")
    records, _ = dataset.load_dataset(args.data)
    if any(r.sinogram is None for r in records):
        raise DataError("bench needs stored sinograms")
    params = _load_model(args.model) if "msfcnn" in methods else None
    out = _prepare_out(args.out, args.force)
    size = records[0].target.shape[0]
    dtype = np.float32 if cfg.bench.dtype == "f32" else np.float64
    table = evalbench.bench(methods, [r.sinogram for r in records], size, params,
                            cfg.bench.repetitions, cfg.osem, dtype,
                            inputs=[r.input for r in records], threads=args.threads)
    evalbench.write_timing_table(table, out / "timing.tsv")
    (out / "timing.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    plotting.timing_bars(table, out / "timing.png")
    write_effective(cfg, out, "bench", {"methods": list(methods), "model": args.model,
                                        "data": str(args.data), "threads": args.threads})
    print((out / "timing.tsv").read_text(), end="")
    return 0


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (sections network, train, "
                                         "sim, osem, bench)")
    common.add_argument("--seed", type=int, help="override the seed of this command")
    common.add_argument("--threads", type=int, default=1,
                        help="BLAS thread count (1 gives bitwise-reproducible output)")
    common.add_argument("--force", action="store_true", help="write into a non-empty --out")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="msfrecon", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a training/test dataset")
    s.add_argument("--n-records", type=int)
    s.add_argument("--size", type=int)
    s.add_argument("--counts", type=float)
    s.add_argument("--n-angles", type=int)
    s.add_argument("--mix", help="phantom ratios, e.g. shepp_logan=1,ellipses=1,hot_spots=1")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", parents=[common], help="fit the network to a dataset")
    t.add_argument("--data", required=True, help="dataset directory from 'simulate'")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--learning-rate", type=float)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reconstruct", parents=[common], help="reconstruct one slice")
    r.add_argument("--method", choices=METHODS, default="msfcnn")
    r.add_argument("--model", help="parameter file (msfcnn method)")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--sinogram", help="raw sinogram file (angles x bins x 1)")
    src.add_argument("--phantom", choices=PHANTOM_KINDS, help="simulate this phantom instead")
    r.add_argument("--size", type=int)
    r.add_argument("--counts", type=float)
    r.add_argument("--n-angles", type=int)
    r.add_argument("--count-scale", type=float, default=1.0,
                   help="phantom units per count for --sinogram input")
    r.add_argument("--preview", action="store_true", help="also write an 8-bit PGM preview")
    r.set_defaults(func=cmd_reconstruct)

    e = sub.add_parser("eval", parents=[common], help="score reconstructions of a test set")
    e.add_argument("--method", choices=METHODS + ("truth",), default="msfcnn")
    e.add_argument("--model")
    e.add_argument("--data", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="time reconstruction methods")
    b.add_argument("--data", required=True)
    b.add_argument("--model")
    b.add_argument("--methods", help="comma list of msfcnn, osem, fbp")
    b.add_argument("--repetitions", type=int)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        with threadpool_limits(args.threads), warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args, cfg)
    except MsfreconError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
