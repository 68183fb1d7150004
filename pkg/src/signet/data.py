"""Dataset generation, ingestion, and persistence: 2D toys, small synthetic
images via inline mixtures, IDX-format grayscale ingestion, CSV and PGM."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from signet.errors import ConfigError, DataError, FormatError
from signet.score import GaussianMixture

KINDS = ("gaussian_mixture", "two_moons", "checkerboard2d", "rings", "idx_images")

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class DatasetSpec:
    kind: str = "gaussian_mixture"
    count: int = 20000
    normalize: bool = True
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.count < 1:
            raise ConfigError("dataset count must be >= 1")

    @classmethod
    def from_config(cls, cfg):
        kind = cfg["dataset.kind"]
        params = {}
        if kind == "gaussian_mixture":
            params["mixture"] = cfg.mixture()
        elif kind == "two_moons":
            params["noise"] = cfg["dataset.moons.noise"]
        elif kind == "rings":
            params["radii"] = cfg.floats("dataset.rings.radii")
            params["noise"] = cfg["dataset.rings.noise"]
        elif kind == "idx_images":
            params["images"] = cfg["dataset.idx.images"]
            params["labels"] = cfg["dataset.idx.labels"] or None
        return cls(kind=kind, count=cfg["dataset.count"],
                   normalize=cfg["dataset.normalize"], params=params)


@dataclass
class DatasetBundle:
    """Samples plus the affine normalization that produced them.

    raw = samples * scale + shift. mixture, when present, is the analytic
    ground truth expressed in normalized coordinates.
    """

    data: np.ndarray
    mixture: GaussianMixture | None = None
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None

    @property
    def dim(self):
        return self.data.shape[1]


def _empirical_normalize(raw):
    shift = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale = np.where(scale < 1e-6, 1.0, scale)
    return (raw - shift) / scale, shift, scale


def generate(spec: DatasetSpec, rng) -> DatasetBundle:
    """Draw a dataset; for mixtures the analytic object (in normalized
    coordinates) rides along so exact teachers stay available."""
    n = spec.count
    if spec.kind == "gaussian_mixture":
        gm = spec.params["mixture"]
        raw = gm.sample(n, rng)
        if spec.normalize:
            # population moments, scalar scale: keeps components isotropic
            shift = gm.population_mean()
            scale_val = float(np.sqrt(gm.population_var().mean()))
            data = (raw - shift) / scale_val
            scale = np.full(gm.dim, scale_val)
            return DatasetBundle(data, gm.transformed(shift, scale_val), shift, scale)
        return DatasetBundle(raw, gm, np.zeros(gm.dim), np.ones(gm.dim))

    if spec.kind == "two_moons":
        noise = spec.params.get("noise", 0.05)
        n_out = n // 2
        t_out = rng.uniform(0.0, np.pi, n_out)
        t_in = rng.uniform(0.0, np.pi, n - n_out)
        outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
        inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
        raw = np.concatenate([outer, inner]) + noise * rng.standard_normal((n, 2))
        raw = raw[rng.permutation(n)]
    elif spec.kind == "checkerboard2d":
        # 8 allowed unit squares on [-2,2]^2 where floor(x)+floor(y) is even
        cells = [(i, j) for i in range(-2, 2) for j in range(-2, 2)
                 if (i + j) % 2 == 0]
        idx = rng.integers(0, len(cells), size=n)
        corners = np.array(cells, dtype=np.float64)[idx]
        raw = corners + rng.uniform(0.0, 1.0, size=(n, 2))
        if spec.normalize:
            scale_val = float(np.sqrt(4.0 / 3.0))  # std of U(-2,2) per dim
            data = raw / scale_val
            return DatasetBundle(data, None, np.zeros(2), np.full(2, scale_val))
        return DatasetBundle(raw, None, np.zeros(2), np.ones(2))
    elif spec.kind == "rings":
        radii = np.asarray(spec.params.get("radii", (0.6, 1.2)), dtype=np.float64)
        noise = spec.params.get("noise", 0.03)
        which = rng.integers(0, len(radii), size=n)
        theta = rng.uniform(0.0, 2.0 * np.pi, n)
        r = radii[which] + noise * rng.standard_normal(n)
        raw = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    elif spec.kind == "idx_images":
        images_path = spec.params.get("images")
        if not images_path:
            raise ConfigError("idx_images requires dataset.idx.images")
        raw, _labels, _hw = load_idx(images_path, spec.params.get("labels"))
        raw = raw[:n]
    else:  # pragma: no cover - guarded by DatasetSpec
        raise ConfigError(f"unknown dataset kind {spec.kind!r}")

    if spec.normalize:
        data, shift, scale = _empirical_normalize(raw)
        return DatasetBundle(data, None, shift, scale)
    d = raw.shape[1]
    return DatasetBundle(raw, None, np.zeros(d), np.ones(d))


# -- IDX ingestion --------------------------------------------------------

def _read_exact(fh, count, what):
    buf = fh.read(count)
    if len(buf) != count:
        raise FormatError(
            f"truncated IDX payload reading {what}: wanted {count} bytes at "
            f"offset {fh.tell() - len(buf)}, got {len(buf)}")
    return buf


def load_idx(images_path, labels_path=None):
    """Big-endian IDX decode; pixels mapped to [-1, 1] by 2*(p/255) - 1."""
    with open(images_path, "rb") as fh:
        magic, = struct.unpack(">I", _read_exact(fh, 4, "image magic"))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(
                f"bad IDX image magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
        count, rows, cols = struct.unpack(">III", _read_exact(fh, 12, "image header"))
        payload = _read_exact(fh, count * rows * cols, "image pixels")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)
    images = 2.0 * (pixels.astype(np.float64) / 255.0) - 1.0

    labels = None
    if labels_path:
        with open(labels_path, "rb") as fh:
            magic, = struct.unpack(">I", _read_exact(fh, 4, "label magic"))
            if magic != IDX_LABEL_MAGIC:
                raise FormatError(
                    f"bad IDX label magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}")
            lcount, = struct.unpack(">I", _read_exact(fh, 4, "label header"))
            if lcount != count:
                raise DataError(f"label count {lcount} != image count {count}")
            labels = np.frombuffer(_read_exact(fh, lcount, "labels"), dtype=np.uint8).copy()
    return images, labels, (rows, cols)


# -- CSV / PGM persistence ------------------------------------------------

def save_samples_csv(path, data):
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    d = data.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"x{i}" for i in range(d)) + "\n")
        for row in data:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_samples_csv(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        d = len(header.split(","))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.strip().split(",")
            if len(parts) != d:
                raise FormatError(f"{path}: line {lineno}: expected {d} values, "
                                  f"got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return np.array(rows, dtype=np.float64).reshape(len(rows), d)


def _quantize(values):
    clamped = np.clip(values, -1.0, 1.0)
    return np.round((clamped + 1.0) * 127.5).astype(np.uint8)


def save_pgm(path, image):
    """Binary P5 at 8 bits; values clamp to [-1, 1] before quantization (lossy)."""
    image = np.atleast_2d(np.asarray(image, dtype=np.float64))
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(_quantize(image).tobytes())


def save_pgm_grid(path, data, hw, columns=8):
    """Tile row-vector images (B, H*W) into one PGM grid."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    h, w = hw
    if data.shape[1] != h * w:
        raise DataError(f"rows of length {data.shape[1]} are not {h}x{w} images")
    b = data.shape[0]
    cols = min(columns, b)
    rows = (b + cols - 1) // cols
    canvas = np.full((rows * h, cols * w), -1.0)
    for k in range(b):
        r, c = divmod(k, cols)
        canvas[r * h:(r + 1) * h, c * w:(c + 1) * w] = data[k].reshape(h, w)
    save_pgm(path, canvas)
