"""Batch command-line front end.

Subcommands: fit (model to CSV or auto-blocked image), compress (block-model
image reconstruction), faces (PCA vs mixture facial reconstruction table),
select (BIC model search). Exit codes: 0 success, 1 usage or validation
error, 2 numerical failure. All artifacts are written atomically.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (DegenerateComponentError, FitFailureError,
                     ModelFormatError, SearchFailureError)
from .fit import FitOptions, SearchGrid, aecm_fit, model_search
from .imaging import (compress_image, extract_blocks, image_rmse_vector,
                      normalize_unit, pca_fit, pca_reconstruct, read_image,
                      reconstruct_vectors, write_image)
from .model import CovStructure, ModelSpec, serialize

_IMAGE_EXTS = {".png", ".ppm", ".pgm"}


class _Parser(argparse.ArgumentParser):
    # argparse defaults to exit code 2 on usage errors; the contract is 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_atomic(path: Path, data: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(data, encoding="utf-8")
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _write_atomic(path, json.dumps(obj, indent=2) + "\n")


def _parse_block(text: str):
    try:
        w, h = text.lower().split("x")
        bw, bh = int(w), int(h)
    except ValueError:
        raise ValueError(f"--block expects WIDTHxHEIGHT (e.g. 4x4), got {text!r}") from None
    if bw < 1 or bh < 1:
        raise ValueError("--block dimensions must be positive")
    return bw, bh


def _parse_int_list(text: str, flag: str):
    try:
        values = [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"{flag} expects a comma-separated integer list, got {text!r}") from None
    if not values:
        raise ValueError(f"{flag} must not be empty")
    return values


def _read_matrix(path: Path) -> np.ndarray:
    """CSV with an optional single header row (detected by a non-numeric
    first line)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    skip = 0
    try:
        [float(v) for v in first.strip().split(",") if v != ""]
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if data.size == 0:
        raise ValueError(f"no numeric rows found in {path}")
    return data


def _load_fit_input(path: Path, block) -> np.ndarray:
    if path.suffix.lower() in _IMAGE_EXTS:
        return extract_blocks(read_image(path), block[0], block[1]).vectors
    return _read_matrix(path)


def _fit_options(args) -> FitOptions:
    return FitOptions(max_iterations=args.max_iter, epsilon=args.epsilon,
                      n_starts=args.starts, seed=args.seed)


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _spec_row(spec: ModelSpec) -> dict:
    return {"structure": spec.structure.value, "df_mode": spec.df_mode,
            "family": spec.family, "g": spec.g, "q": spec.q, "p": spec.p}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"input path {path} does not exist")
    data = _load_fit_input(path, _parse_block(args.block))
    spec = _spec_with_p(args, data.shape[1])
    model, report = aecm_fit(data, spec, _fit_options(args))
    out = _out_dir(args)
    _write_atomic(out / "model.json", serialize(model))
    _write_json(out / "fit_report.json", report.to_dict())
    print(f"loglik={report.final_loglik!r} m={report.m} bic={report.bic!r} "
          f"iterations={report.iterations} converged={report.converged}")
    return 0


def cmd_compress(args) -> int:
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"input path {path} does not exist")
    image = read_image(path)
    bw, bh = _parse_block(args.block)
    channels = 1 if image.ndim == 2 else image.shape[2]
    spec = _spec_with_p(args, bw * bh * channels)
    recon, model, quality = compress_image(image, spec, _fit_options(args),
                                           block_w=bw, block_h=bh)
    out = _out_dir(args)
    recon_path = out / f"reconstruction{path.suffix.lower()}"
    write_image(recon_path, recon)
    _write_atomic(out / "model.json", serialize(model))
    doc = quality.to_dict()
    doc["model_file"] = "model.json"
    _write_json(out / "quality.json", doc)
    psnr_text = "inf" if math.isinf(quality.psnr) else f"{quality.psnr:.4f}"
    print(f"RMSE={quality.rmse:.4f} PSNR={psnr_text}")
    return 0


def _spec_with_p(args, p: int) -> ModelSpec:
    return ModelSpec(structure=CovStructure.parse(args.structure),
                     df_mode=args.df_mode, family=args.family,
                     g=args.g, q=args.q, p=p)


def _load_face_images(directory: Path):
    if not directory.is_dir():
        raise NotADirectoryError(f"{directory} is not a directory")
    paths = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in _IMAGE_EXTS)
    if not paths:
        raise ValueError(f"no supported images (.png/.ppm/.pgm) in {directory}")
    images = []
    shape = None
    for p in paths:
        arr = read_image(p)
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise ValueError(
                f"image {p.name} has size {arr.shape}, expected {shape}")
        images.append(arr)
    return paths, np.stack(images)


def cmd_faces(args) -> int:
    paths, images = _load_face_images(Path(args.input))
    n = images.shape[0]
    shape = images.shape[1:]
    # Intensities are scaled to [0, 1]; reconstructions outside that range
    # are min-max normalized before scoring.
    vectors = images.reshape(n, -1).astype(np.float64) / 255.0
    p = vectors.shape[1]

    k = args.K if args.K is not None else args.q
    g_values = _parse_int_list(args.grid_g, "--grid-g")
    families = [f.strip() for f in args.families.split(",") if f.strip()]
    options = _fit_options(args)

    columns = []  # (name, (n, p) reconstructions)
    basis = pca_fit(vectors, k)
    columns.append(("pca", np.vstack([pca_reconstruct(v, basis, k)
                                      for v in vectors])))
    for family in families:
        for g in g_values:
            spec = ModelSpec(structure=CovStructure.parse(args.structure),
                             df_mode=args.df_mode, family=family,
                             g=g, q=args.q, p=p)
            model, _ = aecm_fit(vectors, spec, options)
            name = f"{family}_g{g}"
            columns.append((name, reconstruct_vectors(vectors, model)))

    out = _out_dir(args)
    table = {}
    for name, recons in columns:
        rmses = []
        for j in range(n):
            rec = recons[j]
            if rec.min() < 0.0 or rec.max() > 1.0:
                rec = normalize_unit(rec)
            rmses.append(image_rmse_vector(vectors[j], rec))
            pixels = np.rint(np.clip(rec.reshape(shape), 0.0, 1.0) * 255.0)
            write_image(out / f"recon_{name}_{paths[j].stem}.png",
                        pixels.astype(np.uint8))
        table[name] = rmses
    _write_json(out / "faces_rmse.json", {
        "models": [name for name, _ in columns],
        "images": [p.name for p in paths],
        "rmse": table,
    })
    print(f"wrote {len(columns)} model columns for {n} images")
    return 0


def cmd_select(args) -> int:
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"input path {path} does not exist")
    data = _load_fit_input(path, _parse_block(args.block))
    p = data.shape[1]
    g_values = _parse_int_list(args.grid_g, "--grid-g")
    q_values = _parse_int_list(args.grid_q, "--grid-q")
    bad_q = [q for q in q_values if q >= p]
    if bad_q:
        raise ValueError(f"grid q values {bad_q} violate q < p (p={p})")
    grid = SearchGrid(g_values=g_values, q_values=q_values,
                      structures=[CovStructure.parse(args.structure)],
                      df_modes=[args.df_mode], families=[args.family])
    result = model_search(data, grid, _fit_options(args))
    rows = [dict(_spec_row(e.spec), loglik=e.report.final_loglik,
                 m=e.report.m, bic=e.report.bic) for e in result.ranking]
    failures = [dict(_spec_row(s), error=msg) for s, msg in result.failures]
    _write_json(_out_dir(args) / "search.json",
                {"ranking": rows, "failures": failures})
    best = result.best
    print(f"best: structure={best.spec.structure.value} g={best.spec.g} "
          f"q={best.spec.q} family={best.spec.family} bic={best.report.bic!r}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser, block: bool = True) -> None:
    sub.add_argument("--input", required=True, help="input file or directory")
    sub.add_argument("--output-dir", default=".", help="directory for artifacts")
    sub.add_argument("--structure", default="cuu",
                     choices=[s.value.lower() for s in CovStructure],
                     help="covariance structure (default cuu)")
    sub.add_argument("--family", default="t", choices=["gaussian", "t"],
                     help="component family (default t)")
    sub.add_argument("--df-mode", default="common", choices=["common", "free"],
                     help="degrees of freedom shared or per component")
    sub.add_argument("-g", type=int, default=1, help="number of components")
    sub.add_argument("-q", type=int, default=1, help="factor dimension")
    if block:
        sub.add_argument("--block", default="4x4",
                         help="block geometry WIDTHxHEIGHT for image input")
    sub.add_argument("--seed", type=int, default=0, help="random seed")
    sub.add_argument("--starts", type=int, default=5, help="number of starts")
    sub.add_argument("--max-iter", type=int, default=1000,
                     help="maximum AECM iterations")
    sub.add_argument("--epsilon", type=float, default=1e-5,
                     help="Aitken convergence tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tfamix",
                     description="Parsimonious mixtures of t factor analyzers: "
                                 "fitting, image compression, eigenfaces, "
                                 "and BIC model search.")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)

    fit = subs.add_parser("fit", help="fit a mixture to a CSV matrix or image")
    _add_common(fit)
    fit.set_defaults(func=cmd_fit)

    comp = subs.add_parser("compress", help="block-model image compression")
    _add_common(comp)
    comp.set_defaults(func=cmd_compress)

    faces = subs.add_parser("faces", help="PCA vs mixture face reconstruction")
    _add_common(faces, block=False)
    faces.add_argument("-K", type=int, default=None,
                       help="PCA basis size (default: q)")
    faces.add_argument("--grid-g", default="1,2,3",
                       help="component counts, comma separated")
    faces.add_argument("--families", default="gaussian,t",
                       help="families to fit, comma separated")
    faces.set_defaults(func=cmd_faces)

    select = subs.add_parser("select", help="BIC search over a model grid")
    _add_common(select)
    select.add_argument("--grid-g", default="1,2,3",
                        help="component counts, comma separated")
    select.add_argument("--grid-q", default="1",
                        help="factor dimensions, comma separated")
    select.set_defaults(func=cmd_select)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, ModelFormatError, FileNotFoundError,
            NotADirectoryError, OSError) as exc:
        print(f"tfamix: error: {exc}", file=sys.stderr)
        return 1
    except (FitFailureError, SearchFailureError, DegenerateComponentError,
            np.linalg.LinAlgError) as exc:
        print(f"tfamix: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
