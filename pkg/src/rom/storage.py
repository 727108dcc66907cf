"""
On-disk reduced models: ``manifest.json`` plus one raw little-endian float64 file per array.
Every file is written under a temporary name and moved into place.
"""

import json
import logging
import os
from pathlib import Path

import numpy as np

from src.errors import ModelStorageError
from src.ocp.kkt import MATRIX_BLOCKS, VECTOR_BLOCKS
from src.rom.reduced_model import ReducedModel, ReducedTerm

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.json"
DTYPE = "<f8"


def _atomic_write(path: Path, payload: bytes) -> None:
    temporary = path.with_name(path.name + ".tmp")
    with open(temporary, "wb") as handle:
        handle.write(payload)
    os.replace(temporary, path)


def _write_array(directory: Path, name: str, array: np.ndarray, registry: dict) -> str:
    array = np.ascontiguousarray(array, dtype=DTYPE)
    _atomic_write(directory / f"{name}.f64", array.tobytes())
    registry[name] = list(array.shape)
    return name


def _read_array(directory: Path, name: str, registry: dict) -> np.ndarray:
    if name not in registry:
        raise ModelStorageError(f"Array '{name}' missing from the manifest in {directory}")
    shape = tuple(registry[name])
    path = directory / f"{name}.f64"
    try:
        data = np.fromfile(path, dtype=DTYPE)
    except OSError as e:
        raise ModelStorageError(f"Cannot read {path}: {e}") from e
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise ModelStorageError(f"{path} holds {data.size} values, manifest expects shape {shape}")
    return data.reshape(shape).astype(float)


def model_directory(output_dir, problem_id: str, rule: str) -> Path:
    return Path(output_dir) / "models" / problem_id / rule


def save_model(model: ReducedModel, directory) -> Path:
    """
    Persist ``model`` into ``directory`` (created if needed).

    Returns:
        Path of the written manifest.
    """
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        arrays: dict[str, list[int]] = {}
        _write_array(directory, "lifting", model.lifting, arrays)
        _write_array(directory, "sigma", model.sigma, arrays)
        for name, basis in model.bases.items():
            _write_array(directory, f"basis_{name}", basis, arrays)
        for name, values in model.eigenvalues.items():
            _write_array(directory, f"eigenvalues_{name}", values, arrays)
        if model.training_nodes is not None:
            _write_array(directory, "training_nodes", model.training_nodes, arrays)
            _write_array(directory, "training_weights", model.training_weights, arrays)
        terms = {}
        for block, block_terms in model.blocks.items():
            terms[block] = []
            for index, term in enumerate(block_terms):
                array = _write_array(directory, f"{block}_{index:02d}", term.matrix, arrays)
                terms[block].append({"theta": term.theta, "scale": term.scale,
                                     "stabilization": term.stabilization, "array": array})
        manifest = {
            "format_version": FORMAT_VERSION,
            "problem": model.problem_id,
            "family": model.family,
            "rule": model.rule,
            "cardinality": model.n_train,
            "sparse_grid_level": model.sample_level,
            "n_max": model.n_max,
            "n": model.n,
            "n_steps": model.n_steps,
            "dt": model.dt,
            "alpha": model.alpha,
            "sigma_dimensions": list(model.sigma_dimensions),
            "eigenvalues": {name: [float(v) for v in values] for name, values in model.eigenvalues.items()},
            "diagnostics": list(model.diagnostics),
            "theta_terms": model.term_listing(),
            "terms": terms,
            "arrays": arrays,
        }
        path = directory / MANIFEST
        _atomic_write(path, json.dumps(manifest, indent=2).encode("utf-8"))
    except OSError as e:
        raise ModelStorageError(f"Cannot write model to {directory}: {e}") from e
    logger.info(f"Model {model.problem_id}/{model.rule} saved to {directory}")
    return path


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ModelStorageError(f"No model at {Path(directory)} (missing {MANIFEST}); run 'offline' first") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ModelStorageError(f"Unreadable manifest {path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ModelStorageError(f"{path} has format version {manifest.get('format_version')}, "
                                f"expected {FORMAT_VERSION}")
    return manifest


def load_model(directory) -> ReducedModel:
    directory = Path(directory)
    manifest = read_manifest(directory)
    arrays = manifest["arrays"]
    try:
        blocks = {
            block: [ReducedTerm(entry["theta"], float(entry["scale"]),
                                _read_array(directory, entry["array"], arrays), bool(entry["stabilization"]))
                    for entry in manifest["terms"].get(block, [])]
            for block in MATRIX_BLOCKS + VECTOR_BLOCKS
        }
        has_sample = "training_nodes" in arrays
        model = ReducedModel(
            problem_id=manifest["problem"],
            family=manifest["family"],
            rule=manifest["rule"],
            n_max=int(manifest["n_max"]),
            n=int(manifest["n"]),
            n_steps=int(manifest["n_steps"]),
            dt=manifest["dt"],
            alpha=float(manifest["alpha"]),
            n_train=int(manifest["cardinality"]),
            lifting=_read_array(directory, "lifting", arrays),
            bases={name: _read_array(directory, f"basis_{name}", arrays) for name in ("y", "u", "p")},
            sigma=_read_array(directory, "sigma", arrays),
            sigma_dimensions=tuple(manifest["sigma_dimensions"]),
            eigenvalues={name: _read_array(directory, f"eigenvalues_{name}", arrays) for name in ("y", "u", "p")},
            blocks=blocks,
            diagnostics=list(manifest.get("diagnostics", [])),
            training_nodes=_read_array(directory, "training_nodes", arrays) if has_sample else None,
            training_weights=_read_array(directory, "training_weights", arrays) if has_sample else None,
            sample_level=manifest.get("sparse_grid_level"),
        )
    except KeyError as e:
        raise ModelStorageError(f"Manifest in {directory} lacks field {e}") from e
    logger.debug(f"Loaded model {model.problem_id}/{model.rule} from {directory}")
    return model
