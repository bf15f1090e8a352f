"""Dataset loading (images/ labels/ masks/ tree with a split manifest) and a
deterministic synthetic vessel-image generator for desk-scale runs.

Synthetic samples imitate the retinal setting: dark branching curvilinear
structures of 1-2 px width on a tinted low-frequency background inside a
circular field of view, plus pixel noise. Every draw comes from one seeded
substream, so a config reproduces its sample bit for bit.
"""

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pnm
from .errors import DataError
from .rng import Rng

IMAGE_EXTS = (".ppm", ".pgm")


@dataclass
class Sample:
    image: np.ndarray      # 3xHxW float32 in [0,1]
    label: np.ndarray      # 1xHxW float32 binary
    fov_mask: np.ndarray   # 1xHxW float32 binary
    id: str


# --------------------------------------------------------------------------
# Directory loading
# --------------------------------------------------------------------------

def _find_match(directory: Path, stem: str):
    for ext in IMAGE_EXTS:
        p = directory / (stem + ext)
        if p.exists():
            return p
    return None


def _load_binary_plane(path, what: str) -> np.ndarray:
    plane = pnm.load_image(path, channels=1)
    extreme = (plane == 0.0) | (plane == 1.0)
    if not extreme.all():
        warnings.warn(f"{path}: non-binary {what} values; thresholding at 0.5")
    return (plane > 0.5).astype(np.float32)


def read_split_manifest(path) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {"train": [], "test": []}
    current = None
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in sections:
                raise DataError(f"{path}: unknown split section [{current}]")
        elif current is None:
            raise DataError(f"{path}: entry {line!r} before any [train]/[test] header")
        else:
            sections[current].append(line)
    return sections


def write_split_manifest(path, train_ids, test_ids) -> None:
    lines = ["[train]"] + list(train_ids) + ["[test]"] + list(test_ids)
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(root, split: str | None = None) -> list[Sample]:
    """Samples from root/{images,labels[,masks]} in lexicographic id order.
    With split given, membership comes from root/split.txt."""
    root = Path(root)
    img_dir, lab_dir, mask_dir = root / "images", root / "labels", root / "masks"
    if not img_dir.is_dir() or not lab_dir.is_dir():
        raise DataError(f"{root}: expected images/ and labels/ subdirectories")
    stems = sorted(p.stem for p in img_dir.iterdir() if p.suffix in IMAGE_EXTS)
    if split is not None:
        manifest = root / "split.txt"
        if not manifest.exists():
            raise DataError(f"{root}: split {split!r} requested but no split.txt manifest")
        wanted = read_split_manifest(manifest).get(split)
        if wanted is None:
            raise DataError(f"{manifest}: no [{split}] section")
        missing = sorted(set(wanted) - set(stems))
        if missing:
            raise DataError(f"{manifest}: listed ids missing from images/: {missing}")
        stems = sorted(set(stems) & set(wanted))

    samples = []
    for stem in stems:
        lab_path = _find_match(lab_dir, stem)
        if lab_path is None:
            raise DataError(f"no label found for image {stem!r}")
        image = pnm.load_image(_find_match(img_dir, stem), channels=3)
        label = _load_binary_plane(lab_path, "label")
        mask_path = _find_match(mask_dir, stem) if mask_dir.is_dir() else None
        if mask_path is not None:
            mask = _load_binary_plane(mask_path, "mask")
        else:
            mask = np.ones_like(label)
        if image.shape[1:] != label.shape[1:] or label.shape != mask.shape:
            raise DataError(f"{stem}: image/label/mask shapes disagree "
                            f"({image.shape} / {label.shape} / {mask.shape})")
        samples.append(Sample(image, label, mask, stem))
    return samples


def save_sample(root, sample: Sample) -> None:
    root = Path(root)
    for sub in ("images", "labels", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    pnm.write_image(root / "images" / f"{sample.id}.ppm", sample.image)
    pnm.write_image(root / "labels" / f"{sample.id}.pgm", sample.label)
    pnm.write_image(root / "masks" / f"{sample.id}.pgm", sample.fov_mask)


# --------------------------------------------------------------------------
# Synthetic vessels
# --------------------------------------------------------------------------

@dataclass
class SynthConfig:
    height: int = 64
    width: int = 64
    n_trees: int = 4
    branch_prob: float = 0.03
    width_range: tuple[float, float] = (2.0, 3.2)
    noise_sigma: float = 0.045
    vessel_contrast: float = 0.7
    n_spots: int = 10
    spot_contrast: float = 0.7
    seed: int = 0


def _fov_mask(h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radius = 0.48 * min(h, w)
    return ((yy - cy) ** 2 + (xx - cx) ** 2 <= radius * radius)


def _stamp_disc(mask, fov, py, px, width):
    h, w = mask.shape
    r = width / 2.0
    span = int(np.ceil(r))
    y0, y1 = max(0, py - span), min(h, py + span + 1)
    x0, x1 = max(0, px - span), min(w, px + span + 1)
    for y in range(y0, y1):
        for x in range(x0, x1):
            if (y - py) ** 2 + (x - px) ** 2 <= r * r and fov[y, x]:
                mask[y, x] = True


MAX_VESSEL_FRACTION = 0.18


def generate_trees(cfg: SynthConfig, rng: Rng) -> list[np.ndarray]:
    """One boolean mask per vessel tree; each tree is 8-connected by
    construction (unit steps, discs stamped along the walk, branches start
    on the parent path). A coverage budget stops growth before the vessel
    fraction can leave its contract."""
    h, w = cfg.height, cfg.width
    fov = _fov_mask(h, w)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    radius = 0.48 * min(h, w)
    budget = int(MAX_VESSEL_FRACTION * h * w)
    covered = np.zeros((h, w), dtype=bool)
    trees = []
    for _ in range(cfg.n_trees):
        mask = np.zeros((h, w), dtype=bool)
        rf = np.sqrt(rng.random()) * 0.6
        ang0 = rng.uniform(0.0, 2 * np.pi)
        start = (cy + rf * radius * np.sin(ang0), cx + rf * radius * np.cos(ang0))
        length = int(rng.uniform(0.9, 1.4) * (h + w) / 2)
        width = rng.uniform(*cfg.width_range)
        walks = [(start, rng.uniform(0.0, 2 * np.pi), length, width, 0)]
        while walks:
            (py, px), ang, steps, wd, depth = walks.pop()
            for _ in range(steps):
                iy, ix = int(round(py)), int(round(px))
                if not (0 <= iy < h and 0 <= ix < w) or not fov[iy, ix]:
                    break
                if covered.sum() >= budget:
                    walks.clear()
                    break
                _stamp_disc(mask, fov, iy, ix, wd)
                covered |= mask
                py += np.sin(ang)
                px += np.cos(ang)
                ang += rng.normal(0.0, 0.22)
                if depth < 2 and rng.random() < cfg.branch_prob:
                    turn = rng.uniform(0.5, 1.1) * (1 if rng.random() < 0.5 else -1)
                    walks.append(((py, px), ang + turn, int(steps * 0.5),
                                  max(wd * 0.75, cfg.width_range[0]), depth + 1))
        trees.append(mask)
    return trees


def _box_blur(a: np.ndarray, r: int) -> np.ndarray:
    """Separable box blur with reflect padding; kernel size 2r+1."""
    k = 2 * r + 1
    for axis in (0, 1):
        ap = np.take(a, np.pad(np.arange(a.shape[axis]), (r, r), mode="reflect"), axis=axis)
        c = np.cumsum(ap, axis=axis, dtype=np.float64)
        zero = np.zeros_like(np.take(c, [0], axis=axis))
        c = np.concatenate([zero, c], axis=axis)
        hi = np.take(c, np.arange(k, c.shape[axis]), axis=axis)
        lo = np.take(c, np.arange(0, c.shape[axis] - k), axis=axis)
        a = ((hi - lo) / k).astype(a.dtype)
    return a


def _distractor_spots(cfg: SynthConfig, rng: Rng, label, fov) -> np.ndarray:
    """Dark vessel-toned dots that are NOT vessels: misleading cues the label
    ignores. Placed inside the FOV, away from the vessel trees."""
    h, w = cfg.height, cfg.width
    spots = np.zeros((h, w), dtype=np.float32)
    near_vessel = _box_blur(label.astype(np.float32), 2) > 0
    for _ in range(cfg.n_spots):
        for _attempt in range(12):
            y = int(rng.integers(0, h))
            x = int(rng.integers(0, w))
            big = rng.random() < 0.5
            if fov[y, x] and not near_vessel[y, x]:
                spots[y, x] = 1.0
                if big:
                    y0, y1 = max(0, y - 1), min(h, y + 2)
                    x0, x1 = max(0, x - 1), min(w, x + 2)
                    spots[y0:y1, x0:x1] = 1.0
                break
    return spots


def synth_vessels(cfg: SynthConfig) -> Sample:
    """Deterministic synthetic sample: branching vessel label, tinted noisy
    background image with distractor dots, circular FOV mask."""
    rng = Rng(cfg.seed).split("synth")
    h, w = cfg.height, cfg.width
    fov = _fov_mask(h, w)
    trees = generate_trees(cfg, rng)
    label = np.zeros((h, w), dtype=bool)
    for t in trees:
        label |= t

    # Low-frequency background: coarse noise grid, nearest-upsampled, blurred.
    gh, gw = -(-h // 8) + 1, -(-w // 8) + 1
    coarse = rng.uniform(0.5, 0.8, (gh, gw)).astype(np.float32)
    bg = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)[:h, :w]
    bg = _box_blur(_box_blur(bg, 4), 4)

    soft = _box_blur(label.astype(np.float32), 1)
    dark = cfg.vessel_contrast * soft
    if cfg.n_spots > 0:
        spots = _distractor_spots(cfg, rng, label, fov)
        dark = np.maximum(dark, cfg.spot_contrast * _box_blur(spots, 1))
    tint = np.array([0.90, 0.55, 0.38], dtype=np.float32)
    image = bg[None] * tint[:, None, None] * (1.0 - dark[None])
    image = image + rng.normal(0.0, cfg.noise_sigma, image.shape).astype(np.float32)
    image = np.clip(image, 0.0, 1.0) * fov[None]

    return Sample(image.astype(np.float32),
                  label.astype(np.float32)[None],
                  fov.astype(np.float32)[None],
                  f"synth_{cfg.seed:06d}")


def synth_dataset(base_cfg: SynthConfig, n: int, seed0: int | None = None) -> list[Sample]:
    """n samples seeded consecutively from seed0 (defaults to base_cfg.seed)."""
    start = base_cfg.seed if seed0 is None else seed0
    out = []
    for i in range(n):
        cfg = SynthConfig(**{**base_cfg.__dict__, "seed": start + i})
        out.append(synth_vessels(cfg))
    return out
