"""HTTP synthesis service.

One trained model is loaded at startup and treated as an immutable
snapshot: request handling builds fresh computation graphs and never writes
to the parameters, so concurrent requests are safe.

Endpoints:
  GET  /health      liveness probe
  GET  /styles      emotion labels with their current PAD coordinates
  GET  /model       configuration summary
  POST /synthesize  text + (pad | emotion) -> mel + wav + duration
"""

from __future__ import annotations

import base64
import uuid

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import dsp
from . import style as stylemod
from . import training as tr


def _parse_pad(raw) -> stylemod.PadVector:
    if isinstance(raw, dict):
        missing = [k for k in ("p", "a", "d") if k not in raw]
        if missing:
            raise HTTPException(400, f"pad object is missing {', '.join(missing)}")
        vals = [raw["p"], raw["a"], raw["d"]]
    elif isinstance(raw, (list, tuple)):
        if len(raw) != 3:
            raise HTTPException(400, f"pad list must have 3 entries, got {len(raw)}")
        vals = list(raw)
    else:
        raise HTTPException(400, "pad must be a {p, a, d} object or a 3-entry list")
    try:
        return stylemod.PadVector(float(vals[0]), float(vals[1]), float(vals[2]))
    except (TypeError, ValueError) as e:
        raise HTTPException(400, f"bad pad value: {e}") from None


def _style_rows(w1: np.ndarray) -> list:
    return [
        {"label": label,
         "p": float(w1[0, j]), "a": float(w1[1, j]), "d": float(w1[2, j])}
        for j, label in enumerate(stylemod.LABELS)
    ]


def create_app(bundle: tr.ModelBundle, model_id: str = "default") -> FastAPI:
    app = FastAPI(title="continuous-emotion synthesis service",
                  docs_url=None, redoc_url=None)
    # the explorer page is served as static files from elsewhere
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    cfg = bundle.synth_cfg

    @app.get("/health")
    def health():
        return {"status": "ok", "model": model_id}

    @app.get("/styles")
    def styles():
        return {"labels": list(stylemod.LABELS),
                "table": _style_rows(bundle.projector.w1.tensor.data)}

    @app.get("/model")
    def model_summary():
        from .synthesizer import count_parameters
        return {
            "model": model_id,
            "stage": bundle.stage,
            "preset": cfg.preset,
            "injection_type": cfg.injection_type,
            "injection_sites": list(cfg.injection_sites),
            "n_parameters": count_parameters(cfg),
            "vocab_size": bundle.vocab.size,
            "n_mels": cfg.n_mels,
            "linear_bins": cfg.linear_bins,
            "reduction_factor": cfg.reduction_factor,
            "sample_rate": dsp.SAMPLE_RATE,
        }

    @app.post("/synthesize")
    def synthesize(req: dict = Body(...)):
        # error model: 400 for any malformed field, 422 reserved for a
        # well-formed but unknown emotion label, 404 for a wrong model id
        model = req.get("model")
        if model is not None and model != model_id:
            raise HTTPException(404, f"unknown model {model!r}")
        text = req.get("text")
        if not isinstance(text, str) or not text:
            raise HTTPException(400, "text must be a non-empty string")
        pad_raw, emotion = req.get("pad"), req.get("emotion")
        if (pad_raw is None) == (emotion is None):
            raise HTTPException(400, "provide exactly one of 'pad' or 'emotion'")
        if emotion is not None:
            if not isinstance(emotion, str):
                raise HTTPException(400, "emotion must be a string label")
            if emotion not in stylemod.LABELS:
                raise HTTPException(
                    422, f"unknown emotion {emotion!r}; "
                         f"valid labels: {', '.join(stylemod.LABELS)}")
            col = bundle.projector.w1.tensor.data[:, stylemod.LABELS.index(emotion)]
            pad = stylemod.PadVector(float(col[0]), float(col[1]), float(col[2]))
        else:
            pad = _parse_pad(pad_raw)
        try:
            sp = bundle.projector.project_from_pad(pad)
            ids = bundle.vocab.encode(text)
            out = bundle.model.free_running(ids, sp)
            linear_mag = dsp.expand(out.linear)
            samples = dsp.peak_normalize(dsp.griffin_lim(linear_mag))
            wav_bytes = dsp.encode_wav(samples)
        except Exception:
            failure_id = uuid.uuid4().hex
            return JSONResponse(status_code=500,
                                content={"error": "internal", "id": failure_id})
        mel = np.ascontiguousarray(out.mel, dtype="<f8")
        return {
            "mel": {"data": base64.b64encode(mel.tobytes()).decode("ascii"),
                    "shape": list(mel.shape),
                    "dtype": "float64"},
            "wav": base64.b64encode(wav_bytes).decode("ascii"),
            "duration_s": samples.size / dsp.SAMPLE_RATE,
            "truncated": out.truncated,
        }

    return app


def load_app(checkpoint_path, model_id: str = "default") -> FastAPI:
    return create_app(tr.load_bundle(checkpoint_path), model_id=model_id)
