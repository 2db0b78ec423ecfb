"""Dataset manifests, augmentation, and the synthetic blob dataset.

A manifest is a CSV with header ``image,subject,au_1,...,au_n`` where
image paths are relative to the manifest's directory and labels are
0/1. Fold assignment hashes the subject id so a subject never straddles
folds and the split is stable across runs and machines.
"""

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ManifestError, ShapeError
from .imageio import read_ppm, write_ppm


@dataclass
class Manifest:
    root: str
    image_names: list
    subjects: list
    labels: np.ndarray  # [N, n] int

    @property
    def n(self):
        return self.labels.shape[1]

    def __len__(self):
        return len(self.image_names)

    def path(self, i):
        return os.path.join(self.root, self.image_names[i])

    def load_image(self, i):
        img = read_ppm(self.path(i))
        if img.ndim != 3 or img.shape[2] != 3:
            raise ShapeError(f"{self.path(i)}: expected a color image")
        return img


def load_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    header = lines[0].split(",")
    if len(header) < 3 or header[0] != "image" or header[1] != "subject":
        raise ManifestError(f"{path} line 1: header must be image,subject,au_1,...")
    n = len(header) - 2
    for j in range(n):
        if header[2 + j] != f"au_{j + 1}":
            raise ManifestError(f"{path} line 1: column {j + 3} must be au_{j + 1}")
    root = os.path.dirname(os.path.abspath(path))
    names, subjects, rows = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != n + 2:
            raise ManifestError(
                f"{path} line {lineno}: expected {n + 2} columns, got {len(cells)}"
            )
        name, subject = cells[0], cells[1]
        if not name or not subject:
            raise ManifestError(f"{path} line {lineno}: empty image or subject field")
        if not os.path.exists(os.path.join(root, name)):
            raise ManifestError(f"{path} line {lineno}: missing image file {name}")
        row = []
        for j, cell in enumerate(cells[2:]):
            if cell not in ("0", "1"):
                raise ManifestError(
                    f"{path} line {lineno}: label au_{j + 1} must be 0 or 1, got {cell!r}"
                )
            row.append(int(cell))
        names.append(name)
        subjects.append(subject)
        rows.append(row)
    if not rows:
        raise ManifestError(f"{path}: manifest has a header but no rows")
    return Manifest(root, names, subjects, np.array(rows, dtype=np.int64))


def write_manifest(path, image_names, subjects, labels):
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[1]
    header = "image,subject," + ",".join(f"au_{j + 1}" for j in range(n))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for name, subject, row in zip(image_names, subjects, labels):
            fh.write(f"{name},{subject}," + ",".join(str(int(v)) for v in row) + "\n")


def subject_fold(subject, k):
    digest = hashlib.md5(subject.encode("utf-8")).hexdigest()
    return int(digest, 16) % k


def fold_assignments(subjects, k):
    if k < 2:
        raise ShapeError(f"fold count must be >= 2, got {k}")
    return np.array([subject_fold(s, k) for s in subjects], dtype=np.int64)


def split_manifest(manifest, k, held_out):
    """Split into (train, eval) manifests by subject hash fold."""
    folds = fold_assignments(manifest.subjects, k)
    train_idx = np.nonzero(folds != held_out)[0]
    eval_idx = np.nonzero(folds == held_out)[0]

    def sub(idx):
        return Manifest(
            manifest.root,
            [manifest.image_names[i] for i in idx],
            [manifest.subjects[i] for i in idx],
            manifest.labels[idx],
        )

    return sub(train_idx), sub(eval_idx)


def augment_image(img, l, margin, flip, rng):
    """Random crop to l x l inside the margin, then horizontal flip."""
    if margin > 0:
        oy = int(rng.integers(0, 2 * margin + 1))
        ox = int(rng.integers(0, 2 * margin + 1))
    else:
        oy = (img.shape[0] - l) // 2
        ox = (img.shape[1] - l) // 2
    out = img[oy:oy + l, ox:ox + l]
    if out.shape[0] != l or out.shape[1] != l:
        raise ShapeError(
            f"image {img.shape[:2]} too small for crop size {l} with margin {margin}"
        )
    if flip and rng.random() < 0.5:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def center_crop(img, l):
    if img.shape[0] < l or img.shape[1] < l:
        raise ShapeError(f"image {img.shape[:2]} smaller than crop size {l}")
    oy = (img.shape[0] - l) // 2
    ox = (img.shape[1] - l) // 2
    return np.ascontiguousarray(img[oy:oy + l, ox:ox + l])


def default_regions(n):
    """Disjoint normalized rectangles, one per output, on a square grid."""
    g = 1
    while g * g < n:
        g += 1
    regions = []
    for i in range(n):
        r, c = divmod(i, g)
        y0 = (r + 0.15) / g
        y1 = (r + 0.85) / g
        x0 = (c + 0.15) / g
        x1 = (c + 0.85) / g
        regions.append((y0, x0, y1, x1))
    return regions


@dataclass
class SyntheticSpec:
    count: int = 32
    n: int = 3
    l: int = 32
    seed: int = 0
    margin: int = 0
    noise: float = 0.02
    background: float = 0.2
    blob_amp: float = 0.6
    blob_sigma_frac: float = 0.06
    distractor_rate: float = 1.0
    subjects: int = 6
    regions: list = field(default_factory=list)  # normalized (y0,x0,y1,x1)

    def resolved_regions(self):
        return list(self.regions) if self.regions else default_regions(self.n)


def _off_region_center(rng, regions, pad):
    """Uniform point at least ``pad`` away from every region, normalized.

    Returns None when rejection sampling finds no room (regions plus
    their margins cover the whole image).
    """
    for _ in range(1000):
        cy = rng.uniform(pad, 1.0 - pad)
        cx = rng.uniform(pad, 1.0 - pad)
        inside = any(
            y0 - pad < cy < y1 + pad and x0 - pad < cx < x1 + pad
            for y0, x0, y1, x1 in regions
        )
        if not inside:
            return cy, cx
    return None


def render_synthetic(labels, rng, spec):
    """One image: dark background, one blob per output.

    An active output gets its blob inside its region; an inactive one
    gets an identical-looking blob placed away from every region (with
    probability ``distractor_rate``), so labels can only be read off
    from blob position, not blob presence.  A rate below 1 also breaks
    counting shortcuts: the total number of blobs no longer determines
    how many regions are active, so no accurate read of output k exists
    that avoids looking at region k itself.  If the regions leave no
    room for off-region placement the inactive blob is skipped.
    """
    side = spec.l + 2 * spec.margin
    img = np.full((side, side, 3), spec.background, dtype=np.float64)
    sigma = spec.blob_sigma_frac * side
    pad = 2.0 * sigma / side
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    regions = spec.resolved_regions()
    for k, (y0, x0, y1, x1) in enumerate(regions):
        if labels[k]:
            cy = rng.uniform(y0 + pad, y1 - pad)
            cx = rng.uniform(x0 + pad, x1 - pad)
        else:
            if rng.random() >= spec.distractor_rate:
                continue
            spot = _off_region_center(rng, regions, pad)
            if spot is None:
                continue
            cy, cx = spot
        d2 = (yy - cy * side) ** 2 + (xx - cx * side) ** 2
        img += (spec.blob_amp * np.exp(-d2 / (2.0 * sigma * sigma)))[:, :, None]
    if spec.noise > 0:
        img += rng.uniform(-spec.noise, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def synth_generate(spec, out_dir):
    """Write spec.count images plus manifest.csv; returns the manifest."""
    if spec.count < 1 or spec.n < 1 or spec.l < 4:
        raise ShapeError("synthetic spec needs count >= 1, n >= 1, l >= 4")
    if not 0.0 <= spec.distractor_rate <= 1.0:
        raise ShapeError(
            f"distractor_rate must be in [0, 1], got {spec.distractor_rate}"
        )
    regions = spec.resolved_regions()
    if len(regions) != spec.n:
        raise ShapeError(f"need {spec.n} regions, got {len(regions)}")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed]))
    names, subjects, rows = [], [], []
    for i in range(spec.count):
        labels = rng.integers(0, 2, size=spec.n)
        img = render_synthetic(labels, rng, spec)
        name = f"img_{i:04d}.ppm"
        write_ppm(os.path.join(out_dir, name), img)
        names.append(name)
        subjects.append(f"subj{i % spec.subjects}")
        rows.append(labels)
    write_manifest(
        os.path.join(out_dir, "manifest.csv"), names, subjects, np.array(rows)
    )
    return load_manifest(os.path.join(out_dir, "manifest.csv"))
