"""Model registry files: one JSON bundle per trained model.

A bundle carries the feature reservoir, the generator (fixed + trainable
weights), the resolved experiment config, and in conditional mode the fitted
affine conditioner. Floats serialize via repr, so a reloaded bundle is
bit-identical to the trained one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .generator import GeneratorParams, generator_from_dict, generator_to_dict
from .rsig import RsParams, rs_params_from_dict, rs_params_to_dict
from .training import OlsFit

MODEL_FORMAT = "rsiggen-model"


@dataclass
class ModelBundle:
    mode: str  # "uncond" | "cond"
    rs: RsParams
    gen: GeneratorParams
    config: dict
    ols: Optional[OlsFit] = None


def _ols_to_dict(ols: Optional[OlsFit]) -> Optional[dict]:
    if ols is None:
        return None
    return {
        "alpha_hat": ols.alpha_hat.tolist(),
        "beta_hat": ols.beta_hat.tolist(),
        "residual_norm": ols.residual_norm,
        "ridge": ols.ridge,
    }


def _ols_from_dict(doc: Optional[dict]) -> Optional[OlsFit]:
    if doc is None:
        return None
    return OlsFit(
        alpha_hat=np.array(doc["alpha_hat"]),
        beta_hat=np.array(doc["beta_hat"]),
        residual_norm=doc["residual_norm"],
        ridge=doc["ridge"],
    )


def save_model(path, bundle: ModelBundle) -> None:
    doc = {
        "format": MODEL_FORMAT,
        "version": 1,
        "mode": bundle.mode,
        "config": bundle.config,
        "rs": rs_params_to_dict(bundle.rs),
        "generator": generator_to_dict(bundle.gen),
        "ols": _ols_to_dict(bundle.ols),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_model(path) -> ModelBundle:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a model file")
    return ModelBundle(
        mode=doc["mode"],
        rs=rs_params_from_dict(doc["rs"]),
        gen=generator_from_dict(doc["generator"]),
        config=doc["config"],
        ols=_ols_from_dict(doc["ols"]),
    )
