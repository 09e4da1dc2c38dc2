"""Skill-library files.

Layout: one header line ``# shdpvar-library v<version> sha256=<hex>``
followed by a JSON document. The digest covers every byte after the header
line. Floats are written with ``repr`` so values round-trip exactly.
"""
import hashlib
import json
import os
import re
from pathlib import Path

import numpy as np

from ..errors import ChecksumError, FormatVersionError, LibraryLoadError
from ..introspection import LikelihoodCurve, SkillLibrary, SkillModel
from ..model import SHDPVARModel, StickyHDPState, VAREmission

FORMAT_VERSION = 1
_MAGIC = re.compile(r"^# shdpvar-library v(\d+)(?: |$)")
_DIGEST = re.compile(r" sha256=([0-9a-f]{64})$")


def _emission_dict(e):
    return {
        "coeffs": e.coeffs.tolist(),
        "noise": e.noise.tolist(),
        "mean": None if e.mean is None else e.mean.tolist(),
    }


def _model_dict(m):
    return {
        "alpha": m.hdp.alpha,
        "gamma": m.hdp.gamma,
        "kappa": m.hdp.kappa,
        "beta": m.hdp.beta.tolist(),
        "pi": m.hdp.pi.tolist(),
        "initial_distribution": m.initial_distribution.tolist(),
        "obs_dim": m.obs_dim,
        "order": m.order,
        "emissions": [_emission_dict(e) for e in m.emissions],
    }


def library_to_dict(library):
    return {
        "feature_config": library.feature_config,
        "skills": [
            {
                "skill_id": s.skill_id,
                "n_trials": s.n_trials,
                "mean_duration": s.mean_duration,
                "curve": {"mu": s.curve.mu.tolist(), "sigma": s.curve.sigma.tolist()},
                "model": _model_dict(s.model),
            }
            for s in library.skills
        ],
    }


def _model_from_dict(d):
    dim, order = int(d["obs_dim"]), int(d["order"])
    emissions = tuple(
        VAREmission(np.array(e["coeffs"], dtype=float).reshape(order, dim, dim), e["noise"], e["mean"])
        for e in d["emissions"])
    hdp = StickyHDPState(d["beta"], d["pi"], d["alpha"], d["gamma"], d["kappa"])
    return SHDPVARModel(hdp, emissions, d["initial_distribution"])


def library_from_dict(d):
    skills = tuple(
        SkillModel(s["skill_id"], _model_from_dict(s["model"]),
                   LikelihoodCurve(s["curve"]["mu"], s["curve"]["sigma"]),
                   int(s["n_trials"]), float(s["mean_duration"]))
        for s in d["skills"])
    return SkillLibrary(skills, d["feature_config"])


def dumps_library(library):
    body = json.dumps(library_to_dict(library), sort_keys=True, indent=1) + "\n"
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return f"# shdpvar-library v{FORMAT_VERSION} sha256={digest}\n{body}"


def loads_library(text):
    header, _, body = text.partition("\n")
    magic = _MAGIC.match(header)
    if not magic:
        raise LibraryLoadError("not a skill-library file")
    version = int(magic.group(1))
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"library format v{version} is not supported (expected v{FORMAT_VERSION})")
    digest = _DIGEST.search(header)
    if not digest or hashlib.sha256(body.encode("utf-8")).hexdigest() != digest.group(1):
        raise ChecksumError("library checksum mismatch (file truncated or modified)")
    try:
        return library_from_dict(json.loads(body))
    except (ValueError, KeyError, TypeError) as exc:
        raise LibraryLoadError(f"malformed library content: {exc}") from exc


def save_library(library, path):
    """Write atomically: a temporary sibling is renamed over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_library(library))
    os.replace(tmp, path)
    return path


def load_library(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise LibraryLoadError(f"{path} is not UTF-8 text") from exc
    return loads_library(text)
