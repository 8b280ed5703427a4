"""Dataset types, disk ingestion, preprocessing and synthetic face data.

Images travel through the library as 2-D float grids in [-1, 1] (the
generator ends in a tanh). On disk they are 8-bit PNGs; fMRI vectors are
flat little-endian float32 binaries with a ``.len`` sidecar, or one-line
CSV files. A dataset is described by a UTF-8 CSV manifest with header
``image_path,expression,identity,gender,fmri_path,subject_id,split``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

N_EXPRESSION_CLASSES = 7
N_GENDER_CLASSES = 2

MANIFEST_COLUMNS = (
    "image_path",
    "expression",
    "identity",
    "gender",
    "fmri_path",
    "subject_id",
    "split",
)

# (mouth curvature, mouth opening, eye-opening scale) for the seven
# expression classes used by the procedural renderer.
_EXPRESSION_SHAPES = (
    (0.40, 0.06, 1.00),
    (0.00, 0.05, 1.00),
    (-0.40, 0.06, 1.00),
    (0.00, 0.30, 1.45),
    (-0.25, 0.16, 0.60),
    (0.22, 0.18, 1.25),
    (-0.40, 0.28, 1.40),
)


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class AttributeTarget:
    """One-hot (expression, identity, gender) labels for a face image."""

    expression: int
    identity: int
    gender: int
    n_identities: int

    def __post_init__(self):
        if not 0 <= self.expression < N_EXPRESSION_CLASSES:
            raise ValueError(f"expression label {self.expression} outside [0, {N_EXPRESSION_CLASSES})")
        if self.n_identities <= 0:
            raise ValueError("n_identities must be positive")
        if not 0 <= self.identity < self.n_identities:
            raise ValueError(f"identity label {self.identity} outside [0, {self.n_identities})")
        if not 0 <= self.gender < N_GENDER_CLASSES:
            raise ValueError(f"gender label {self.gender} outside [0, {N_GENDER_CLASSES})")

    @property
    def vector_length(self) -> int:
        return N_EXPRESSION_CLASSES + self.n_identities + N_GENDER_CLASSES

    def expression_onehot(self) -> np.ndarray:
        v = np.zeros(N_EXPRESSION_CLASSES)
        v[self.expression] = 1.0
        return v

    def identity_onehot(self) -> np.ndarray:
        v = np.zeros(self.n_identities)
        v[self.identity] = 1.0
        return v

    def gender_onehot(self) -> np.ndarray:
        v = np.zeros(N_GENDER_CLASSES)
        v[self.gender] = 1.0
        return v

    def as_vector(self) -> np.ndarray:
        """Concatenated one-hot target, order (expression, identity, gender)."""
        return np.concatenate(
            [self.expression_onehot(), self.identity_onehot(), self.gender_onehot()]
        )


@dataclass
class ImageSample:
    """A normalized grayscale image grid with its attribute labels."""

    pixels: np.ndarray
    attributes: AttributeTarget
    source_id: str

    def validate(self) -> "ImageSample":
        p = self.pixels
        if p.ndim != 2:
            raise ValueError(f"pixels must be 2-D, got shape {p.shape}")
        h, w = p.shape
        if not (_is_power_of_two(h) and _is_power_of_two(w)):
            raise ValueError(f"image sides must be powers of two, got {h}x{w}")
        if not np.isfinite(p).all():
            raise ValueError("pixels contain non-finite values")
        if p.min() < -1.0 or p.max() > 1.0:
            raise ValueError("pixels outside [-1, 1]")
        return self


@dataclass
class FmriRecord:
    """A preprocessed voxel-feature vector tied to one viewed image."""

    voxels: np.ndarray
    subject_id: int
    stimulus_id: str

    def validate(self) -> "FmriRecord":
        v = np.asarray(self.voxels)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("voxels must be a non-empty 1-D vector")
        if not np.isfinite(v).all():
            raise ValueError("voxels contain non-finite values")
        return self


@dataclass
class ManifestEntry:
    image_path: str
    expression: int
    identity: int
    gender: int
    fmri_path: str | None
    subject_id: int | None
    split: str


@dataclass
class DatasetManifest:
    """Parsed dataset manifest; paths are relative to ``root``."""

    entries: list[ManifestEntry]
    root: Path

    def subset(self, split: str) -> "DatasetManifest":
        return DatasetManifest(
            [e for e in self.entries if e.split == split], self.root
        )


@dataclass
class SyntheticSpec:
    """Parameters of the deterministic desk-scale face dataset."""

    n_identities: int = 4
    n_expressions: int = 3
    image_size: int = 32
    n_repeats: int = 2
    fmri_dim: int = 64
    noise_sigma: float = 0.01
    seed: int = 0
    n_subjects: int = 2

    def __post_init__(self):
        for name in ("n_identities", "n_expressions", "image_size", "n_repeats", "fmri_dim", "n_subjects"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_expressions > N_EXPRESSION_CLASSES:
            raise ValueError(f"n_expressions cannot exceed {N_EXPRESSION_CLASSES}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not _is_power_of_two(self.image_size):
            raise ValueError("image_size must be a power of two")

    @property
    def n_images(self) -> int:
        return self.n_identities * self.n_expressions * N_GENDER_CLASSES * self.n_repeats

    @property
    def attr_dim(self) -> int:
        return N_EXPRESSION_CLASSES + self.n_identities + N_GENDER_CLASSES

    def subject_voxel_length(self, subject_id: int) -> int:
        # Subjects differ in voxel count so padding is actually exercised.
        return self.fmri_dim + subject_id * max(1, self.fmri_dim // 10)


def preprocess_image(raw: np.ndarray, target_size: int, to_gray: bool = True) -> np.ndarray:
    """Resize and normalize a raw image to a [-1, 1] float grid.

    Integer inputs (and floats with values above 1) are read on the
    [0, 255] scale; float inputs already inside [-1, 1] are passed through
    unscaled, which makes the function idempotent on conforming grids.
    """
    arr = np.asarray(raw)
    if arr.ndim not in (2, 3):
        raise ValueError(f"expected a 2-D or 3-D image, got shape {arr.shape}")
    if arr.size == 0 or min(arr.shape[:2]) == 0:
        raise ValueError("zero-sized image")
    if arr.ndim == 3 and arr.shape[2] not in (1, 3):
        raise ValueError(f"expected 1 or 3 channels, got {arr.shape[2]}")
    if not _is_power_of_two(target_size):
        raise ValueError(f"target_size must be a power of two, got {target_size}")

    raw_scale = np.issubdtype(arr.dtype, np.integer) or (arr.size > 0 and float(arr.max()) > 1.0)
    arr = arr.astype(np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]

    if to_gray and arr.ndim == 3:
        # ITU-R 601 luma, matching PIL's RGB -> L conversion weights.
        arr = arr @ np.array([0.299, 0.587, 0.114])

    if arr.shape[:2] != (target_size, target_size):
        channels = [arr] if arr.ndim == 2 else [arr[:, :, c] for c in range(arr.shape[2])]
        resized = []
        for ch in channels:
            im = Image.fromarray(ch.astype(np.float32), mode="F")
            im = im.resize((target_size, target_size), Image.BILINEAR)
            resized.append(np.asarray(im, dtype=np.float64))
        arr = resized[0] if len(resized) == 1 else np.stack(resized, axis=2)

    if raw_scale:
        arr = arr / 255.0 * 2.0 - 1.0
    return np.clip(arr, -1.0, 1.0).astype(np.float32)


def _identity_params(seed: int, identity: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 101, identity]))
    u = rng.uniform(size=8)
    return {
        "face_w": 0.52 + 0.22 * u[0],
        "face_h": 0.62 + 0.22 * u[1],
        "eye_dx": 0.20 + 0.14 * u[2],
        "eye_y": 0.14 + 0.12 * u[3],
        "eye_r": 0.050 + 0.045 * u[4],
        "mouth_w": 0.26 + 0.12 * u[5],
        "mouth_y": 0.32 + 0.12 * u[6],
        "nose_len": 0.12 + 0.12 * u[7],
    }


def _render_face(size: int, params: dict, expression: int, gender: int,
                 dx: float, dy: float, brightness: float) -> np.ndarray:
    """Rasterize one face on the [0, 1] intensity scale."""
    ax = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(ax, ax)
    xx = xx - dx
    yy = yy - dy

    curve, opening, eye_scale = _EXPRESSION_SHAPES[expression]
    skin = 0.42 if gender == 0 else 0.72

    img = np.zeros((size, size))
    head = (xx / params["face_w"]) ** 2 + (yy / params["face_h"]) ** 2 <= 1.0
    img[head] = skin

    if gender == 0:
        hair = head & (yy < -0.58 * params["face_h"])
        img[hair] = 0.12

    for sx in (-1.0, 1.0):
        ex = sx * params["eye_dx"]
        ey = -params["eye_y"]
        eye = ((xx - ex) / params["eye_r"]) ** 2 + (
            (yy - ey) / (params["eye_r"] * eye_scale)
        ) ** 2 <= 1.0
        img[eye & head] = 0.06

    nose = (np.abs(xx) < 0.035) & (yy > -0.02) & (yy < params["nose_len"])
    img[nose & head] = skin * 0.6

    mx = xx / params["mouth_w"]
    mouth_center = params["mouth_y"] - curve * (mx**2 - 0.5)
    mouth = (np.abs(mx) <= 1.0) & (np.abs(yy - mouth_center) <= 0.5 * opening + 0.035)
    img[mouth & head] = 0.10

    return np.clip(img + brightness, 0.0, 1.0)


def _quantize_to_unit(img01: np.ndarray) -> np.ndarray:
    """Snap a [0, 1] image onto the 8-bit lattice, returned in [-1, 1]."""
    u8 = np.round(img01 * 255.0).astype(np.uint8)
    return (u8.astype(np.float32) / 255.0 * 2.0 - 1.0).astype(np.float32)


def generate_synthetic_dataset(
    spec: SyntheticSpec,
) -> tuple[list[ImageSample], list[FmriRecord], dict[int, np.ndarray]]:
    """Deterministic procedural faces plus simulated fMRI responses.

    Voxel vectors are a fixed per-subject linear mix of the concatenated
    attribute one-hot vector plus Gaussian noise, so a linear map back to
    feature space exists by construction. Returns the per-subject mixing
    matrices (voxel_length x attr_dim) alongside the samples.
    """
    mixing = {}
    for s in range(spec.n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 303, s]))
        mixing[s] = rng.normal(size=(spec.subject_voxel_length(s), spec.attr_dim))

    images: list[ImageSample] = []
    records: list[FmriRecord] = []
    sample_index = 0
    for identity in range(spec.n_identities):
        params = _identity_params(spec.seed, identity)
        for expression in range(spec.n_expressions):
            for gender in range(N_GENDER_CLASSES):
                for repeat in range(spec.n_repeats):
                    jitter = np.random.default_rng(
                        np.random.SeedSequence([spec.seed, 202, sample_index])
                    )
                    dx, dy = jitter.uniform(-0.05, 0.05, size=2)
                    brightness = jitter.uniform(-0.06, 0.06)
                    img01 = _render_face(
                        spec.image_size, params, expression, gender, dx, dy, brightness
                    )
                    attrs = AttributeTarget(expression, identity, gender, spec.n_identities)
                    source_id = f"syn_i{identity:03d}_e{expression}_g{gender}_r{repeat:03d}"
                    images.append(
                        ImageSample(_quantize_to_unit(img01), attrs, source_id).validate()
                    )

                    t_attr = attrs.as_vector()
                    for s in range(spec.n_subjects):
                        noise_rng = np.random.default_rng(
                            np.random.SeedSequence([spec.seed, 404, sample_index, s])
                        )
                        voxels = mixing[s] @ t_attr
                        if spec.noise_sigma > 0:
                            voxels = voxels + spec.noise_sigma * noise_rng.normal(
                                size=voxels.shape
                            )
                        records.append(FmriRecord(voxels, s, source_id).validate())
                    sample_index += 1

    return images, records, mixing


def pad_fmri(records: list[FmriRecord]) -> np.ndarray:
    """Stack voxel vectors into an n x L_max matrix, zero-padded on the right."""
    if not records:
        raise ValueError("cannot pad an empty record list")
    lengths = [len(r.voxels) for r in records]
    l_max = max(lengths)
    out = np.zeros((len(records), l_max))
    for i, r in enumerate(records):
        out[i, : lengths[i]] = r.voxels
    return out


def save_fmri_vector(path: Path, voxels: np.ndarray) -> None:
    """Write a voxel vector: flat little-endian float32 with a .len sidecar,
    or a one-line CSV when the path ends in .csv."""
    path = Path(path)
    v = np.asarray(voxels, dtype=np.float64).ravel()
    if path.suffix == ".csv":
        path.write_text(",".join(repr(float(x)) for x in v) + "\n", encoding="utf-8")
    else:
        v.astype("<f4").tofile(path)
        Path(str(path) + ".len").write_text(f"{v.size}\n", encoding="utf-8")


def load_fmri_vector(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"fMRI file not found: {path}")
    if path.suffix == ".csv":
        text = path.read_text(encoding="utf-8").strip()
        return np.array([float(x) for x in text.split(",")]) if text else np.array([])
    sidecar = Path(str(path) + ".len")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing length sidecar for {path}")
    n = int(sidecar.read_text(encoding="utf-8").strip())
    data = np.fromfile(path, dtype="<f4")
    if data.size != n:
        raise ValueError(
            f"{path}: sidecar declares {n} values but file holds {data.size}"
        )
    return data.astype(np.float64)


def read_manifest(manifest_path: Path) -> DatasetManifest:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    entries = []
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_COLUMNS:
            raise ValueError(
                f"{manifest_path}: expected header {','.join(MANIFEST_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ValueError(
                    f"{manifest_path}:{lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(row)}"
                )
            try:
                fmri_path = row[4].strip() or None
                entries.append(
                    ManifestEntry(
                        image_path=row[0].strip(),
                        expression=int(row[1]),
                        identity=int(row[2]),
                        gender=int(row[3]),
                        fmri_path=fmri_path,
                        subject_id=int(row[5]) if row[5].strip() else None,
                        split=row[6].strip(),
                    )
                )
            except ValueError as err:
                raise ValueError(f"{manifest_path}:{lineno}: malformed row ({err})") from err
            if entries[-1].split not in ("train", "eval"):
                raise ValueError(
                    f"{manifest_path}:{lineno}: split must be train or eval, got {entries[-1].split!r}"
                )
    return DatasetManifest(entries, manifest_path.parent)


def load_image_dataset(
    manifest_path: Path,
    target_size: int | None = None,
    split: str | None = None,
    n_identities: int | None = None,
) -> list[ImageSample]:
    """Load one preprocessed ImageSample per manifest row, in row order."""
    manifest = read_manifest(manifest_path)
    entries = manifest.entries if split is None else [e for e in manifest.entries if e.split == split]
    if n_identities is None:
        n_identities = max((e.identity for e in manifest.entries), default=0) + 1

    samples = []
    for entry in entries:
        img_path = manifest.root / entry.image_path
        if not img_path.exists():
            raise FileNotFoundError(f"image file not found: {img_path}")
        with Image.open(img_path) as im:
            raw = np.asarray(im)
        size = target_size if target_size is not None else max(raw.shape[:2])
        pixels = preprocess_image(raw, size, to_gray=True)
        attrs = AttributeTarget(entry.expression, entry.identity, entry.gender, n_identities)
        samples.append(ImageSample(pixels, attrs, entry.image_path).validate())
    return samples


def load_paired_dataset(
    manifest_path: Path,
    target_size: int | None = None,
    split: str | None = None,
    n_identities: int | None = None,
) -> tuple[list[ImageSample], list[FmriRecord]]:
    """Load (image, fMRI) pairs: two aligned lists, one element per paired row."""
    manifest = read_manifest(manifest_path)
    entries = manifest.entries if split is None else [e for e in manifest.entries if e.split == split]
    paired = [e for e in entries if e.fmri_path]
    if n_identities is None:
        n_identities = max((e.identity for e in manifest.entries), default=0) + 1

    images, records = [], []
    for entry in paired:
        img_path = manifest.root / entry.image_path
        if not img_path.exists():
            raise FileNotFoundError(f"image file not found: {img_path}")
        with Image.open(img_path) as im:
            raw = np.asarray(im)
        size = target_size if target_size is not None else max(raw.shape[:2])
        pixels = preprocess_image(raw, size, to_gray=True)
        attrs = AttributeTarget(entry.expression, entry.identity, entry.gender, n_identities)
        images.append(ImageSample(pixels, attrs, entry.image_path).validate())
        voxels = load_fmri_vector(manifest.root / entry.fmri_path)
        if entry.subject_id is None:
            raise ValueError(f"paired row for {entry.image_path} lacks subject_id")
        records.append(FmriRecord(voxels, entry.subject_id, entry.image_path).validate())
    return images, records


def assign_splits(images: list[ImageSample], eval_fraction: float, seed: int) -> dict[str, str]:
    """Deterministically mark a fraction of stimuli as the eval split."""
    if not 0.0 <= eval_fraction < 1.0:
        raise ValueError("eval_fraction must be in [0, 1)")
    ids = [img.source_id for img in images]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 777]))
    order = rng.permutation(len(ids))
    n_eval = int(round(eval_fraction * len(ids)))
    eval_ids = {ids[i] for i in order[:n_eval]}
    return {sid: ("eval" if sid in eval_ids else "train") for sid in ids}


def write_dataset(
    images: list[ImageSample],
    records: list[FmriRecord],
    out_dir: Path,
    splits: dict[str, str] | None = None,
) -> Path:
    """Write PNGs, fMRI files and a manifest.csv; returns the manifest path.

    Paired images get one manifest row per fMRI record; images without
    records get a single image-only row (empty fmri_path/subject_id).
    """
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "fmri").mkdir(parents=True, exist_ok=True)

    by_stimulus: dict[str, list[FmriRecord]] = {}
    for rec in records:
        by_stimulus.setdefault(rec.stimulus_id, []).append(rec)

    rows = []
    for img in images:
        u8 = np.round((img.pixels.astype(np.float64) + 1.0) / 2.0 * 255.0).astype(np.uint8)
        rel_img = f"images/{img.source_id}.png"
        Image.fromarray(u8, mode="L").save(out_dir / rel_img)
        split = (splits or {}).get(img.source_id, "train")
        a = img.attributes
        recs = by_stimulus.get(img.source_id, [])
        if not recs:
            rows.append((rel_img, a.expression, a.identity, a.gender, "", "", split))
        for rec in recs:
            rel_fmri = f"fmri/{img.source_id}_s{rec.subject_id}.bin"
            save_fmri_vector(out_dir / rel_fmri, rec.voxels)
            rows.append((rel_img, a.expression, a.identity, a.gender, rel_fmri, rec.subject_id, split))

    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)
    return manifest_path


def dedupe_by_source(images: list[ImageSample]) -> list[ImageSample]:
    """Keep the first occurrence of each source_id, preserving order."""
    seen: set[str] = set()
    out = []
    for img in images:
        if img.source_id not in seen:
            seen.add(img.source_id)
            out.append(img)
    return out
