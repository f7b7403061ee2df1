"""File formats and persistence: CSV loaders, the binary array container,
checkpoints, PCA models, metrics/report JSON, and run manifests.

The binary container is shared by features.bin, pca_model.bin, and
checkpoints: a 16-byte magic, a little-endian uint64 header length, a JSON
header whose "arrays" list fixes the payload order, then the raw float64
row-major bytes of each named array.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .preprocess import ExpressionMatrix, PcaModel
from .vae import PARAM_ORDER, ModelParams

MAGIC = b"DPGENBINARYv001\n"
TOOL_VERSION = "0.1.0"


# ---------------------------------------------------------------------------
# generic helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# binary array container


def write_array_container(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    names = list(arrays)
    meta = dict(header)
    meta["dtype"] = "f64"
    meta["order"] = "row-major"
    meta["arrays"] = [{"name": n, "shape": list(arrays[n].shape)} for n in names]
    header_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<Q", len(header_bytes)))
    buf.write(header_bytes)
    for n in names:
        arr = np.ascontiguousarray(arrays[n], dtype=np.float64)
        buf.write(arr.astype("<f8", copy=False).tobytes())
    atomic_write_bytes(path, buf.getvalue())


def read_array_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a dpgen binary container")
    offset = len(MAGIC)
    (header_len,) = struct.unpack_from("<Q", raw, offset)
    offset += 8
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt container header: {exc}") from exc
    offset += header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header.get("arrays", []):
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise DataFormatError(f"{path}: truncated payload for array {entry['name']!r}")
        flat = np.frombuffer(raw[offset:end], dtype="<f8")
        arrays[entry["name"]] = flat.reshape(shape).astype(np.float64)
        offset = end
    return header, arrays


# ---------------------------------------------------------------------------
# expression / coordinates CSV and MatrixMarket


def write_expression_csv(path, x: ExpressionMatrix) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["spot_id", *x.gene_ids])
    for i, spot in enumerate(x.spot_ids):
        writer.writerow([spot, *(repr(float(v)) for v in x.values[i])])
    atomic_write_text(path, out.getvalue())


def write_coords_csv(path, spot_ids: list[str], coords: np.ndarray) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["spot_id", "x", "y"])
    for spot, (cx, cy) in zip(spot_ids, np.asarray(coords, dtype=np.float64)):
        writer.writerow([spot, repr(float(cx)), repr(float(cy))])
    atomic_write_text(path, out.getvalue())


def _parse_cell(text: str, row: int, col: int, path) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"{path}: malformed numeric cell at row {row}, column {col}: {text!r}") from None


def load_expression(path) -> ExpressionMatrix:
    """Read expression from CSV (header: spot_id + gene ids) or MatrixMarket.

    A `.mtx` file expects sidecar `genes.txt` and `spots.txt` (one id per
    line) in the same directory, rows indexing spots and columns genes.
    """
    path = Path(path)
    if path.suffix == ".mtx":
        return _load_expression_mtx(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if not header or header[0] != "spot_id":
            raise DataFormatError(f"{path}: first header cell must be 'spot_id', got {header[:1]!r}")
        gene_ids = header[1:]
        spot_ids: list[str] = []
        rows: list[list[float]] = []
        for r, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
            spot_ids.append(row[0])
            rows.append([_parse_cell(cell, r, c + 2, path) for c, cell in enumerate(row[1:])])
    values = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(gene_ids)))
    return ExpressionMatrix(values, spot_ids, gene_ids)


def _load_expression_mtx(path: Path) -> ExpressionMatrix:
    from scipy.io import mmread

    genes_path = path.with_name("genes.txt")
    spots_path = path.with_name("spots.txt")
    for sidecar in (genes_path, spots_path):
        if not sidecar.exists():
            raise DataFormatError(f"{path}: missing sidecar id file {sidecar.name}")
    try:
        loaded = mmread(path)
    except Exception as exc:
        raise DataFormatError(f"{path}: MatrixMarket parse failure: {exc}") from exc
    matrix = np.asarray(loaded.toarray() if hasattr(loaded, "toarray") else loaded, dtype=np.float64)
    gene_ids = genes_path.read_text(encoding="utf-8").split()
    spot_ids = spots_path.read_text(encoding="utf-8").split()
    if matrix.shape != (len(spot_ids), len(gene_ids)):
        raise DataFormatError(
            f"{path}: matrix shape {matrix.shape} does not match "
            f"{len(spot_ids)} spots x {len(gene_ids)} genes"
        )
    return ExpressionMatrix(matrix, spot_ids, gene_ids)


def load_coords(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header[:3] != ["spot_id", "x", "y"]:
            raise DataFormatError(f"{path}: header must be spot_id,x,y, got {header!r}")
        spot_ids: list[str] = []
        rows: list[list[float]] = []
        for r, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataFormatError(f"{path}: row {r} has {len(row)} cells, expected 3")
            spot_ids.append(row[0])
            rows.append([_parse_cell(row[1], r, 2, path), _parse_cell(row[2], r, 3, path)])
    coords = np.array(rows, dtype=np.float64) if rows else np.zeros((0, 2))
    return spot_ids, coords


def align_coords(x: ExpressionMatrix, coord_ids: list[str], coords: np.ndarray) -> np.ndarray:
    """Reorder coordinate rows to the expression spot order; mismatches error."""
    index = {spot: i for i, spot in enumerate(coord_ids)}
    missing = [s for s in x.spot_ids if s not in index]
    extra = [s for s in coord_ids if s not in set(x.spot_ids)]
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing from coords: {', '.join(missing[:5])}")
        if extra:
            parts.append(f"unknown in coords: {', '.join(extra[:5])}")
        raise DataFormatError("spot id mismatch: " + "; ".join(parts))
    return coords[[index[s] for s in x.spot_ids]]


# ---------------------------------------------------------------------------
# features, PCA model, checkpoint


def write_features(path, features: np.ndarray, spot_ids: list[str]) -> None:
    write_array_container(
        path,
        {"kind": "features", "dims": list(features.shape), "spot_ids": list(spot_ids)},
        {"features": features},
    )


def read_features(path) -> tuple[np.ndarray, list[str]]:
    header, arrays = read_array_container(path)
    if header.get("kind") != "features":
        raise DataFormatError(f"{path}: expected a features container, got kind={header.get('kind')!r}")
    return arrays["features"], list(header["spot_ids"])


def write_pca_model(path, model: PcaModel, hvg_indices: list[int], hvg_gene_ids: list[str], scale: float) -> None:
    write_array_container(
        path,
        {
            "kind": "pca_model",
            "hvg_indices": list(map(int, hvg_indices)),
            "hvg_gene_ids": list(hvg_gene_ids),
            "normalize_scale": scale,
            "rank_deficient": model.rank_deficient,
        },
        {
            "mean": model.mean,
            "components": model.components,
            "explained_variance": model.explained_variance,
        },
    )


def read_pca_model(path) -> tuple[PcaModel, dict]:
    header, arrays = read_array_container(path)
    if header.get("kind") != "pca_model":
        raise DataFormatError(f"{path}: expected a pca_model container, got kind={header.get('kind')!r}")
    model = PcaModel(
        arrays["mean"],
        arrays["components"],
        arrays["explained_variance"],
        rank_deficient=bool(header.get("rank_deficient", False)),
    )
    return model, header


def write_checkpoint(path, params: ModelParams, config: dict, seed: int) -> None:
    write_array_container(
        path,
        {
            "kind": "checkpoint",
            "in_dim": params.in_dim,
            "hidden_dim": params.hidden_dim,
            "latent_dim": params.latent_dim,
            "config": config,
            "seed": seed,
            "param_order": list(PARAM_ORDER),
        },
        {name: getattr(params, name) for name in PARAM_ORDER},
    )


def read_checkpoint(path) -> tuple[ModelParams, dict]:
    header, arrays = read_array_container(path)
    if header.get("kind") != "checkpoint":
        raise DataFormatError(f"{path}: expected a checkpoint container, got kind={header.get('kind')!r}")
    missing = [n for n in PARAM_ORDER if n not in arrays]
    if missing:
        raise DataFormatError(f"{path}: checkpoint missing arrays {missing}")
    return ModelParams.from_dict(arrays), header


# ---------------------------------------------------------------------------
# history / metrics / manifest


def write_history_csv(path, history) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["epoch", "loss", "recon", "kl", "distortion", "lambda", "wall_time"])
    for rec in history.records:
        writer.writerow(
            [
                rec.epoch,
                repr(rec.loss),
                repr(rec.recon),
                repr(rec.kl),
                repr(rec.distortion),
                repr(rec.lambda_value),
                repr(rec.wall_time),
            ]
        )
    atomic_write_text(path, out.getvalue())


def write_latent_csv(path, spot_ids: list[str], mu: np.ndarray) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["spot_id", *(f"mu_{d}" for d in range(mu.shape[1]))])
    for spot, row in zip(spot_ids, mu):
        writer.writerow([spot, *(repr(float(v)) for v in row)])
    atomic_write_text(path, out.getvalue())


def write_sweep_csv(path, rows: list[dict]) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["alpha", "seed", "mse", "morans_i_mean", "gearys_c_mean", "lambda", "epochs"])
    for r in rows:
        writer.writerow(
            [
                repr(float(r["alpha"])),
                r["seed"],
                repr(float(r["mse"])),
                repr(float(r["morans_i_mean"])),
                repr(float(r["gearys_c_mean"])),
                repr(float(r["lambda"])),
                r["epochs"],
            ]
        )
    atomic_write_text(path, out.getvalue())


def write_mask_edges_csv(path, mask_graph) -> None:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["i", "j"])
    for i, j in mask_graph.sorted_edges():
        writer.writerow([i, j])
    atomic_write_text(path, out.getvalue())


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    stage_seconds: dict[str, float] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": [str(p) for p in self.outputs],
            "stage_seconds": self.stage_seconds,
            "tool_version": self.tool_version,
        }


class StageTimer:
    """Accumulates per-stage wall times into a manifest."""

    def __init__(self, manifest: RunManifest):
        self.manifest = manifest

    def __call__(self, name: str):
        return _Stage(self.manifest, name)


class _Stage:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest = manifest
        self.name = name

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.stage_seconds[self.name] = time.perf_counter() - self._start
        return False


def write_manifest(path, manifest: RunManifest) -> None:
    write_json(path, manifest.to_dict())
