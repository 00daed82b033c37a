"""Stateless HTTP sampling service for the poke-editor UI.

One immutable model snapshot is loaded at startup; every request re-derives
its randomness from (seed, sample index), so identical requests with the same
seed produce byte-identical response bodies. Wall-clock timing is reported in
the X-Timing-Ms header to keep bodies deterministic.
"""

from __future__ import annotations

import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, Field

from . import evalkit, pipeline, synthkin, trackdata
from .motiongen import Condition, Poke, load_generator
from .motionvae import load_vae

log = logging.getLogger("zipmo.service")

MAX_QUERY_POINTS = 64 * 64        # dense-decode cap
MAX_DECODE_BUDGET = 8192          # num_samples * query count


class PokeBody(BaseModel):
    anchor: list[float] = Field(min_length=2, max_length=2)
    target: list[float] = Field(min_length=2, max_length=2)
    t_star: int = Field(ge=0)


class SampleRequestBody(BaseModel):
    scene_id: str
    pokes: list[PokeBody] = Field(default_factory=list)
    num_samples: int = Field(default=1, ge=1, le=64)
    nfe: int = Field(default=10, ge=1, le=200)
    query_points: list[list[float]] | None = None
    seed: int = 0


@dataclass
class SceneEntry:
    stem: str
    family: str
    label: int
    raster_size: int
    frame_png: bytes
    frame_embedding: object
    horizon: int


def _png_bytes(raster: np.ndarray) -> bytes:
    img = Image.fromarray(np.clip(raster * 255.0, 0, 255).astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def create_app(model_path, scenes_dir, vae_path=None) -> FastAPI:
    gen, stats, meta = load_generator(model_path)
    resolved_vae = vae_path or meta["vae_checkpoint"]
    if resolved_vae is None:
        raise FileNotFoundError("generator bundle records no VAE checkpoint; pass --vae")
    vae, vhash = load_vae(resolved_vae)
    if meta["vae_hash"] and meta["vae_hash"] != vhash:
        raise ValueError("generator/VAE checkpoint hash mismatch; refusing to serve")

    scenes_dir = Path(scenes_dir)
    manifest = scenes_dir / "manifest.json"
    if manifest.exists():
        stems = json.loads(manifest.read_text())["stems"]
    else:
        stems = sorted(p.name[:-len(".scene.json")] for p in scenes_dir.glob("*.scene.json"))
    if not stems:
        raise FileNotFoundError(f"no scenes found in {scenes_dir}")

    scenes: dict[str, SceneEntry] = {}
    for stem in stems:
        scn = synthkin.read_scenario(scenes_dir, stem)
        scenes[stem] = SceneEntry(
            stem=stem, family=scn.family, label=scn.label,
            raster_size=scn.raster.shape[0], frame_png=_png_bytes(scn.raster),
            frame_embedding=vae.encode_frame(scn.raster), horizon=scn.tracks.T)
    log.info("loaded %d scenes, model hash %s", len(scenes), meta["hash"][:12])

    app = FastAPI(title="zipmo sampling service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"], expose_headers=["X-Timing-Ms"])

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        path = ".".join(str(p) for p in first["loc"])
        return JSONResponse(status_code=400,
                            content={"detail": f"{path}: {first['msg']}"})

    @app.get("/v1/scenes")
    def list_scenes():
        return {"scenes": [{"id": s.stem, "family": s.family, "label": s.label,
                            "raster_size": s.raster_size}
                           for s in scenes.values()]}

    @app.get("/v1/scenes/{scene_id}/frame")
    def scene_frame(scene_id: str):
        entry = scenes.get(scene_id)
        if entry is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown scene '{scene_id}'"})
        return Response(content=entry.frame_png, media_type="image/png")

    @app.post("/v1/sample")
    def sample_motion(body: SampleRequestBody):
        t_start = time.perf_counter()
        entry = scenes.get(body.scene_id)
        if entry is None:
            return JSONResponse(status_code=404, content={"detail": f"unknown scene '{body.scene_id}'"})

        pokes = []
        for i, p in enumerate(body.pokes):
            if max(abs(p.anchor[0]), abs(p.anchor[1]), abs(p.target[0]), abs(p.target[1])) > 1.0:
                return JSONResponse(status_code=400,
                                    content={"detail": f"pokes.{i}: coordinates outside [-1, 1]"})
            if p.t_star >= entry.horizon:
                return JSONResponse(status_code=400,
                                    content={"detail": f"pokes.{i}.t_star: outside horizon {entry.horizon}"})
            pokes.append(Poke(anchor=np.array(p.anchor), target=np.array(p.target), t_star=p.t_star))

        if body.query_points is not None:
            grid_q = np.asarray(body.query_points, dtype=np.float64).reshape(-1, 2)
            if grid_q.size and np.abs(grid_q).max() > 1.0:
                return JSONResponse(status_code=400,
                                    content={"detail": "query_points: coordinates outside [-1, 1]"})
        else:
            grid_q = pipeline.default_query_grid(16)
        anchors = np.array([p.anchor for p in pokes]).reshape(-1, 2)
        queries = np.concatenate([grid_q, anchors]) if pokes else grid_q
        if queries.shape[0] > MAX_QUERY_POINTS + len(pokes):
            return JSONResponse(status_code=422, content={
                "detail": f"query count {queries.shape[0]} exceeds cap {MAX_QUERY_POINTS}"})
        if body.num_samples * queries.shape[0] > MAX_DECODE_BUDGET:
            return JSONResponse(status_code=422, content={
                "detail": (f"num_samples * query count = {body.num_samples * queries.shape[0]} "
                           f"exceeds cap {MAX_DECODE_BUDGET}")})

        cond = Condition(pokes=tuple(pokes), label=entry.label, frame=entry.frame_embedding)
        latents = pipeline.sample_latents(gen, stats, cond, body.num_samples, body.nfe, body.seed)
        decoded = pipeline.decode_latents(vae, latents, queries, entry.frame_embedding)

        epes = []
        samples_payload = []
        for k in range(body.num_samples):
            ts = pipeline.clamp_tracks(decoded[k], entry.stem)
            samples_payload.append(ts.as_array().tolist())
            if pokes:
                anchor_ts = trackdata.TrackSet(tracks=ts.tracks[len(grid_q):], frame_id=ts.frame_id)
                epes.append(evalkit.epe(pokes, evalkit.SampleSet(samples=(anchor_ts,))))
        payload = {"samples": samples_payload, "epe": epes, "model_hash": meta["hash"]}
        timing_ms = (time.perf_counter() - t_start) * 1e3
        log.info("sample scene=%s pokes=%d k=%d nfe=%d: %.1f ms",
                 body.scene_id, len(pokes), body.num_samples, body.nfe, timing_ms)
        return Response(content=_canonical_json(payload), media_type="application/json",
                        headers={"X-Timing-Ms": f"{timing_ms:.1f}"})

    return app
