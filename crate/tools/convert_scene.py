#!/usr/bin/env python3
"""Convert a MATLAB-distributed hyperspectral scene to the toolkit containers.

The common public scenes (Indian Pines corrected, KSC, ...) ship as a pair of
.mat files: a h x w x c reflectance cube and a h x w ground-truth grid whose
zeros mark unlabeled pixels. This script rewrites them as:

  cube.hsc    ASCII header  "HSC1 <h> <w> <c>\n"  then h*w*c little-endian
              float32 values, row-major over height, width, band
  labels.lbl  ASCII header  "LBL1 <h> <w> <k>\n"  then h*w little-endian
              uint16 labels, 0 = unlabeled, 1..k = classes

Values are written as they appear in the .mat file; per-band normalization
happens inside the toolkit at load time.

Usage:
  python3 tools/convert_scene.py \
      --cube-mat Indian_pines_corrected.mat --gt-mat Indian_pines_gt.mat \
      --out data/indian

  python3 tools/convert_scene.py \
      --cube-mat KSC.mat --gt-mat KSC_gt.mat --out data/ksc

Requires scipy and numpy.
"""

import argparse
import pathlib
import sys

import numpy as np
import scipy.io


def mat_array(path: str, key: str | None) -> np.ndarray:
    data = scipy.io.loadmat(path)
    keys = [k for k in data if not k.startswith("__")]
    if key is None:
        if len(keys) != 1:
            sys.exit(f"{path}: pass --cube-key/--gt-key, found variables {keys}")
        key = keys[0]
    if key not in data:
        sys.exit(f"{path}: no variable {key!r}, found {keys}")
    return np.asarray(data[key])


def write_cube(path: pathlib.Path, cube: np.ndarray) -> None:
    if cube.ndim != 3:
        sys.exit(f"cube must be h x w x c, got shape {cube.shape}")
    h, w, c = cube.shape
    values = np.ascontiguousarray(cube, dtype="<f4")
    with open(path, "wb") as f:
        f.write(f"HSC1 {h} {w} {c}\n".encode("ascii"))
        f.write(values.tobytes())
    print(f"wrote {path} ({h}x{w}x{c})")


def write_labels(path: pathlib.Path, gt: np.ndarray) -> None:
    if gt.ndim != 2:
        sys.exit(f"ground truth must be h x w, got shape {gt.shape}")
    if (gt < 0).any():
        sys.exit("ground truth contains negative labels")
    h, w = gt.shape
    k = int(gt.max())
    if k == 0:
        sys.exit("ground truth has no labeled pixels")
    if k > 0xFFFF:
        sys.exit(f"class index {k} does not fit in uint16")
    labels = np.ascontiguousarray(gt, dtype="<u2")
    with open(path, "wb") as f:
        f.write(f"LBL1 {h} {w} {k}\n".encode("ascii"))
        f.write(labels.tobytes())
    counts = np.bincount(labels.ravel(), minlength=k + 1)
    print(f"wrote {path} ({h}x{w}, {k} classes, {counts[1:].sum()} labeled)")
    for cls in range(1, k + 1):
        print(f"  class {cls}: {counts[cls]}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cube-mat", required=True, help=".mat file with the reflectance cube")
    ap.add_argument("--cube-key", help="variable name inside the cube .mat (default: the only one)")
    ap.add_argument("--gt-mat", required=True, help=".mat file with the ground-truth grid")
    ap.add_argument("--gt-key", help="variable name inside the ground-truth .mat")
    ap.add_argument("--out", required=True, help="output directory for cube.hsc and labels.lbl")
    args = ap.parse_args()

    cube = mat_array(args.cube_mat, args.cube_key)
    gt = mat_array(args.gt_mat, args.gt_key)
    if cube.shape[:2] != gt.shape:
        sys.exit(f"spatial extents differ: cube {cube.shape[:2]} vs ground truth {gt.shape}")

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cube(out / "cube.hsc", cube)
    write_labels(out / "labels.lbl", gt)


if __name__ == "__main__":
    main()
