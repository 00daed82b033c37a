"""zipmo command line: data generation, training, evaluation, sampling, service.

Invocation: zipmo <command> --config <path> [--seed N] [--out DIR]
Exit codes: 0 ok, 2 config schema violation, 3 missing file.
Commands compose through files only; logs go to stderr, artifacts to --out.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evalkit, pipeline, synthkin, trackdata
from .motiongen import (Condition, GenConfig, Poke, build_latent_dataset,
                        load_generator, train_generator, tracks_to_pokes)
from .motionvae import OptimConfig, VaeConfig, load_vae, train_vae
from .nnkit import AttentionConfig, FourierSpec
from .schemas import ConfigViolation, validate_config
from .seeding import derive_seed

log = logging.getLogger("zipmo")

EXIT_SCHEMA = 2
EXIT_MISSING = 3


def _load_config(path: str, command: str, seed_override: int | None) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigViolation("$", f"config is not valid JSON: {e}")
    validate_config(doc, command)
    if seed_override is not None:
        doc["seed"] = seed_override
    doc.setdefault("seed", 0)
    return doc


def _vae_config(doc: dict) -> VaeConfig:
    block = dict(doc.get("vae", {}))
    if "nn" in block:
        block["nn"] = AttentionConfig(**block["nn"])
    if "fourier" in block:
        block["fourier"] = FourierSpec(**block["fourier"])
    return VaeConfig(**block)


def _gen_overrides(doc: dict) -> dict:
    block = dict(doc.get("gen", {}))
    if "nn" in block:
        block["nn"] = AttentionConfig(**block["nn"])
    if "fourier" in block:
        block["fourier"] = FourierSpec(**block["fourier"])
    return block


def _optim(doc: dict, key: str = "optim") -> OptimConfig:
    return OptimConfig.from_dict(doc.get(key, {}))


def _eval_options(doc: dict) -> pipeline.EvalOptions:
    keys = ("num_samples", "nfe", "n_pokes", "encode_tracks", "metric_grid",
            "pck_space", "knn_k", "var_threshold", "max_eval_tracks", "seed")
    kwargs = {k: doc[k] for k in keys if k in doc}
    if "pck_thresholds" in doc:
        kwargs["pck_thresholds"] = tuple(doc["pck_thresholds"])
    return pipeline.EvalOptions(**kwargs)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(doc: dict, out: Path) -> None:
    families = doc["families"]
    count = doc["count"]
    n_tracks = doc.get("n_tracks", 24)
    horizon = doc.get("horizon", 64)
    resolution = doc.get("resolution", 64)
    base_seed = doc["seed"]
    out.mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(count):
        family = families[i % len(families)]
        scn = synthkin.generate(family, seed=derive_seed(base_seed, "synth", i),
                                n_tracks=n_tracks, T=horizon, resolution=resolution,
                                params=doc.get("params") or None)
        stem = f"{i:05d}_{family}"
        synthkin.write_scenario(scn, out, stem)
        stems.append(stem)
    (out / "manifest.json").write_text(json.dumps({"config": doc, "stems": stems}))
    log.info("wrote %d scenarios to %s", count, out)


def cmd_train_vae(doc: dict, out: Path) -> None:
    scenarios = pipeline.load_dataset(doc["dataset"], limit=doc.get("limit"))
    cfg = _vae_config(doc)
    model, rows = train_vae(scenarios, cfg, _optim(doc), doc["seed"], out_dir=out,
                            tracks_per_scene=doc.get("tracks_per_scene", 16),
                            time_subset=doc.get("time_subset"))
    log.info("vae trained: step0 total=%.4f last total=%.4f -> %s",
             rows[0]["total"], rows[-1]["total"], out / "vae.ckpt.npz")


def cmd_train_gen(doc: dict, out: Path) -> None:
    scenarios = pipeline.load_dataset(doc["dataset"], limit=doc.get("limit"))
    vae_path = Path(doc["vae_checkpoint"])
    vae, vhash = load_vae(vae_path)
    latents = build_latent_dataset(vae, scenarios, encode_tracks=doc.get("encode_tracks", 16),
                                   seed=doc["seed"])
    cfg = GenConfig.from_vae(vae.cfg, **_gen_overrides(doc))
    _, _, rows = train_generator(latents, cfg, _optim(doc), doc["seed"], out_dir=out,
                                 vae_hash=vhash, vae_checkpoint=str(vae_path.resolve()),
                                 max_pokes=doc.get("max_pokes", 8))
    log.info("generator trained: step0 loss=%.4f last loss=%.4f -> %s",
             rows[0]["loss"], rows[-1]["loss"], out / "gen.ckpt.npz")


def _load_models(doc: dict):
    vae, vhash = load_vae(doc["vae_checkpoint"])
    gen = stats = None
    if doc.get("gen_checkpoint"):
        gen, stats, meta = load_generator(doc["gen_checkpoint"])
        if meta["vae_hash"] and meta["vae_hash"] != vhash:
            raise ValueError("generator was trained against a different VAE checkpoint "
                             f"(expected hash {meta['vae_hash'][:12]}..., got {vhash[:12]}...)")
    return vae, gen, stats


def _eval_from_files(doc: dict, out: Path) -> None:
    """Score saved sample track files against a dataset scene."""
    opts = _eval_options(doc)
    dataset = Path(doc["dataset"])
    stem = doc.get("scene")
    if stem is None:
        raise ConfigViolation("$.scene", "files-mode eval needs a scene stem")
    scn = synthkin.read_scenario(dataset, stem)
    gt = pipeline.eval_tracks(scn, opts)
    samples_dir = Path(doc["samples_dir"])
    if not samples_dir.exists():
        raise FileNotFoundError(f"samples_dir not found: {samples_dir}")
    files = sorted(samples_dir.glob("sample*.tracks.json"))
    if not files:
        raise FileNotFoundError(f"no sample*.tracks.json files in {samples_dir}")
    tracksets = tuple(trackdata.load_tracks(f) for f in files)
    samples = evalkit.SampleSet(samples=tracksets, provenance={"files": [f.name for f in files]})

    manifest_path = samples_dir / "sample_manifest.json"
    report = evalkit.MetricReport(counts={"samples": len(files)}, config={"scene": stem})
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        pokes = [Poke(anchor=np.array(p["anchor"]), target=np.array(p["target"]),
                      t_star=p["t_star"]) for p in manifest.get("pokes", [])]
        if pokes:
            n_grid = len(manifest["query_points"]) - len(pokes)
            anchor_sets = tuple(
                trackdata.TrackSet(tracks=s.tracks[n_grid:], frame_id=s.frame_id)
                for s in tracksets)
            report.epe = evalkit.epe(pokes, evalkit.SampleSet(samples=anchor_sets),
                                     grid=opts.metric_grid)
    if samples.samples[0].N == gt.N and samples.samples[0].T == gt.T:
        mn, mean = evalkit.min_mean_mse(gt, samples, grid=opts.metric_grid)
        report.min_mse, report.mean_mse = mn, mean
        if report.epe is None:
            report.epe = evalkit.epe(tracks_to_pokes(gt, [gt.T - 1]), samples,
                                     grid=opts.metric_grid)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    log.info("files-mode eval -> %s", out / "report.json")


def cmd_eval(doc: dict, out: Path) -> None:
    if doc.get("samples_dir"):
        _eval_from_files(doc, out)
        return
    scenarios = pipeline.load_dataset(doc["dataset"], limit=doc.get("scenes"))
    vae, gen, stats = _load_models(doc)
    opts = _eval_options(doc)
    report = pipeline.evaluate_dataset(vae, gen, stats, scenarios, opts)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    with open(out / "summary.csv", "w") as f:
        f.write(evalkit.metric_csv_header() + "\n")
        f.write(evalkit.metric_csv_row("eval", report) + "\n")
    log.info("eval report -> %s", out / "report.json")


def cmd_sample(doc: dict, out: Path) -> None:
    gen, stats, meta = load_generator(doc["gen_checkpoint"])
    vae_path = doc.get("vae_checkpoint") or meta["vae_checkpoint"]
    if vae_path is None:
        raise FileNotFoundError("no VAE checkpoint recorded in the generator bundle; pass vae_checkpoint")
    vae, vhash = load_vae(vae_path)
    if meta["vae_hash"] and meta["vae_hash"] != vhash:
        raise ValueError("generator/VAE checkpoint hash mismatch; refusing to decode")
    scn = synthkin.read_scenario(Path(doc["dataset"]), doc["scene"])

    pokes = [Poke(anchor=np.array(p["anchor"]), target=np.array(p["target"]), t_star=p["t_star"])
             for p in doc.get("pokes", [])]
    if doc.get("query_points"):
        grid_q = np.asarray(doc["query_points"], dtype=np.float64)
    else:
        grid_q = pipeline.default_query_grid(doc.get("query_grid", 16))
    anchors = np.array([p.anchor for p in pokes]).reshape(-1, 2)
    queries = np.concatenate([grid_q, anchors]) if len(pokes) else grid_q

    f0 = vae.encode_frame(scn.raster)
    label = doc.get("label", scn.label)
    cond = Condition(pokes=tuple(pokes), label=label, frame=f0)
    num, nfe, seed = doc.get("num_samples", 4), doc.get("nfe", 10), doc["seed"]
    latents = pipeline.sample_latents(gen, stats, cond, num, nfe, seed)
    decoded = pipeline.decode_latents(vae, latents, queries, f0)

    out.mkdir(parents=True, exist_ok=True)
    res = scn.raster.shape[0]
    epes = []
    for k in range(num):
        ts = pipeline.clamp_tracks(decoded[k], scn.tracks.frame_id)
        trackdata.save_tracks(ts, out / f"sample{k:03d}.tracks.json", width=res, height=res)
        if pokes:
            anchor_ts = trackdata.TrackSet(tracks=ts.tracks[len(grid_q):], frame_id=ts.frame_id)
            epes.append(evalkit.epe(pokes, evalkit.SampleSet(samples=(anchor_ts,))))
    manifest = {
        "scene": doc["scene"], "seed": seed, "nfe": nfe, "num_samples": num,
        "model_hash": meta["hash"],
        "pokes": [{"anchor": p.anchor.tolist(), "target": p.target.tolist(), "t_star": p.t_star}
                  for p in pokes],
        "query_points": [q.tolist() for q in queries],
        "epe": epes,
    }
    (out / "sample_manifest.json").write_text(json.dumps(manifest, sort_keys=True))
    log.info("wrote %d samples to %s", num, out)


def cmd_ablate_compression(doc: dict, out: Path) -> None:
    scenarios = pipeline.load_dataset(doc["dataset"], limit=doc.get("limit"))
    eval_scenarios = scenarios[:doc.get("eval_scenes", 10)]
    seed = doc["seed"]
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for t_c in doc["t_c_list"]:
        vae_block = dict(doc.get("vae", {}))
        vae_block["t_c"] = t_c
        cfg = _vae_config({"vae": vae_block})
        log.info("ablation t_c=%d: training vae", t_c)
        run_dir = out / f"tc{t_c:02d}"
        vae, _ = train_vae(scenarios, cfg, _optim(doc, "vae_optim"), seed, out_dir=run_dir,
                           tracks_per_scene=doc.get("tracks_per_scene", 16))
        latents = build_latent_dataset(vae, scenarios, encode_tracks=doc.get("encode_tracks", 16),
                                       seed=seed)
        gcfg = GenConfig.from_vae(vae.cfg, **_gen_overrides(doc))
        from .motionvae import vae_hash as vhash_fn
        gen, stats, _ = train_generator(latents, gcfg, _optim(doc, "gen_optim"), seed,
                                        out_dir=run_dir, vae_hash=vhash_fn(vae),
                                        vae_checkpoint=str(run_dir / "vae.ckpt.npz"))
        opts = pipeline.EvalOptions(num_samples=doc.get("num_samples", 8),
                                    nfe=doc.get("nfe", 10), seed=seed)
        report = pipeline.evaluate_dataset(vae, gen, stats, eval_scenarios, opts)
        throughput = pipeline.sampling_throughput(gen, stats, nfe=opts.nfe)
        rows.append({"t_c": t_c, "min_mse": report.min_mse, "mean_mse": report.mean_mse,
                     "pck": report.delta_avg, "knn_acc": report.knn_acc,
                     "sample_throughput": throughput})
        log.info("ablation t_c=%d: min=%.3f mean=%.3f pck=%.3f knn=%s tput=%.1f",
                 t_c, report.min_mse, report.mean_mse, report.delta_avg,
                 report.knn_acc, throughput)
    with open(out / "ablation.csv", "w") as f:
        f.write("t_c,min_mse,mean_mse,pck,knn_acc,sample_throughput\n")
        for r in rows:
            knn = "" if r["knn_acc"] is None else f"{r['knn_acc']:.6g}"
            f.write(f"{r['t_c']},{r['min_mse']:.6g},{r['mean_mse']:.6g},"
                    f"{r['pck']:.6g},{knn},{r['sample_throughput']:.6g}\n")
    log.info("ablation CSV -> %s", out / "ablation.csv")


COMMANDS = {
    "synth": cmd_synth,
    "train-vae": cmd_train_vae,
    "train-gen": cmd_train_gen,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "ablate-compression": cmd_ablate_compression,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="zipmo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
    serve = sub.add_parser("serve")
    serve.add_argument("--addr", default="127.0.0.1:8000")
    serve.add_argument("--model", required=True, help="generator checkpoint bundle")
    serve.add_argument("--scenes", required=True, help="scene dataset directory")
    serve.add_argument("--vae", default=None, help="override the recorded VAE checkpoint path")

    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")

    if args.command == "serve":
        import uvicorn
        from .service import create_app
        host, _, port = args.addr.rpartition(":")
        app = create_app(args.model, args.scenes, vae_path=args.vae)
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
        return 0

    try:
        doc = _load_config(args.config, args.command, args.seed)
        out = Path(args.out) if args.out else Path(f"out-{args.command}")
        COMMANDS[args.command](doc, out)
        return 0
    except ConfigViolation as e:
        log.error("config violation at %s: %s", e.path, e.message)
        return EXIT_SCHEMA
    except FileNotFoundError as e:
        log.error("%s", e)
        return EXIT_MISSING
    except Exception as e:
        log.error("command failed: %s", e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
