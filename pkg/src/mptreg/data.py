"""Dataset ingestion and perturbation: IDX parsing, synthetic blobs, noise, splits.

All inputs live inside the prior support [-1, 1] per coordinate; every
generator and perturbation is bit-deterministic given its seed, and datasets
are immutable once constructed.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

STANDARD_NOISE_LEVELS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclass(frozen=True)
class Dataset:
    """Labeled inputs inside the prior support, with K = num_labels classes."""

    inputs: np.ndarray
    labels: np.ndarray
    name: str
    num_labels: int

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim < 2 or x.shape[0] == 0:
            raise ValueError(f"inputs must be a nonempty (N, ...) array, got shape {x.shape}")
        if x.size and float(np.abs(x).max()) > 1.0:
            raise ValueError("inputs must lie within the prior support [-1, 1]")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels must have shape ({x.shape[0]},), got {y.shape}")
        if y.dtype.kind not in "iu":
            raise ValueError(f"labels must be integers, got dtype {y.dtype}")
        if self.num_labels < 1:
            raise ValueError(f"num_labels must be positive, got {self.num_labels}")
        if int(y.min()) < 0 or int(y.max()) >= self.num_labels:
            raise ValueError(
                f"labels must lie in [0, {self.num_labels}), got range [{y.min()}, {y.max()}]"
            )
        y = y.astype(np.int64)
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Uniform noise level as a fraction of the prior support, plus its seed."""

    level: float
    seed: int

    def __post_init__(self):
        if not 0.0 < self.level <= 1.0:
            raise ValueError(f"noise level must be in (0, 1], got {self.level}")


def _read_idx_header(data: bytes, path, magic: int, n_dims: int) -> tuple[int, ...]:
    header = 4 * (1 + n_dims)
    if len(data) < header:
        raise ValueError(f"truncated IDX file {path}")
    got = struct.unpack_from(">I", data)[0]
    if got != magic:
        raise ValueError(f"unexpected IDX magic {got} in {path}, expected {magic}")
    return struct.unpack_from(">" + "I" * n_dims, data, 4)


def load_idx(images_path, labels_path, *, add_channel_dim: bool = False) -> Dataset:
    """Parse an IDX image/label file pair (big-endian, unsigned-byte pixels).

    Pixels map linearly from [0, 255] onto [-1, 1].  K is fixed at 10.  Pass
    ``add_channel_dim=True`` to get (N, 1, rows, cols) inputs for conv nets.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_data = images_path.read_bytes()
    n, rows, cols = _read_idx_header(img_data, images_path, IDX_IMAGES_MAGIC, 3)
    if len(img_data) < 16 + n * rows * cols:
        raise ValueError(f"truncated IDX file {images_path}")
    lbl_data = labels_path.read_bytes()
    (n_labels,) = _read_idx_header(lbl_data, labels_path, IDX_LABELS_MAGIC, 1)
    if len(lbl_data) < 8 + n_labels:
        raise ValueError(f"truncated IDX file {labels_path}")
    if n != n_labels:
        raise ValueError(f"image count {n} does not match label count {n_labels}")
    pixels = np.frombuffer(img_data, dtype=np.uint8, count=n * rows * cols, offset=16)
    inputs = pixels.astype(np.float64) * 2.0 / 255.0 - 1.0
    shape = (n, 1, rows, cols) if add_channel_dim else (n, rows, cols)
    labels = np.frombuffer(lbl_data, dtype=np.uint8, count=n, offset=8).astype(np.int64)
    return Dataset(inputs.reshape(shape), labels, images_path.stem, 10)


def write_idx(dataset: Dataset, images_path, labels_path) -> None:
    """Write a dataset as an IDX pair, quantizing [-1, 1] back to bytes.

    Inverse of :func:`load_idx` for byte-derived values, so a parse/write/parse
    cycle is bit-exact.
    """
    x = dataset.inputs
    if x.ndim == 4 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 3:
        raise ValueError(f"IDX images must be (N, rows, cols), got shape {dataset.inputs.shape}")
    n, rows, cols = x.shape
    pixels = np.clip(np.rint((x + 1.0) * 255.0 / 2.0), 0, 255).astype(np.uint8)
    Path(images_path).write_bytes(
        struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">II", IDX_LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


def synth_blobs(
    n_per_class: int,
    num_labels: int,
    centers,
    spread: float,
    seed: int,
    *,
    name: str = "blobs",
) -> Dataset:
    """Gaussian blobs around per-class centers in [-1, 1]^2, clamped to the support."""
    if num_labels < 2:
        raise ValueError(f"need at least 2 classes, got {num_labels}")
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be positive, got {n_per_class}")
    if not spread > 0:
        raise ValueError(f"spread must be positive, got {spread}")
    c = np.asarray(centers, dtype=np.float64)
    if c.shape != (num_labels, 2):
        raise ValueError(f"centers must have shape ({num_labels}, 2), got {c.shape}")
    if float(np.abs(c).max()) > 1.0:
        raise ValueError("centers must lie within the prior support [-1, 1]")
    rng = np.random.default_rng(int(seed) % (1 << 64))
    points = c[:, None, :] + spread * rng.standard_normal((num_labels, n_per_class, 2))
    inputs = np.clip(points.reshape(-1, 2), -1.0, 1.0)
    labels = np.repeat(np.arange(num_labels), n_per_class)
    return Dataset(inputs, labels, name, num_labels)


def perturb(dataset: Dataset, noise: NoiseSpec) -> Dataset:
    """Add per-coordinate uniform noise on [-level, level], then clamp to [-1, 1].

    The level is a fraction of the prior's support range (width 2), so level 1
    noise spans the full support.  Labels are unchanged.
    """
    rng = np.random.default_rng(int(noise.seed) % (1 << 64))
    noisy = dataset.inputs + rng.uniform(-noise.level, noise.level, size=dataset.inputs.shape)
    return Dataset(np.clip(noisy, -1.0, 1.0), dataset.labels, dataset.name, dataset.num_labels)


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split into disjoint, exhaustive (train, test) parts."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} examples at fraction {train_fraction} leaves a side empty")
    perm = np.random.default_rng(int(seed) % (1 << 64)).permutation(n)
    parts = []
    for tag, idx in (("train", perm[:n_train]), ("test", perm[n_train:])):
        parts.append(
            Dataset(
                dataset.inputs[idx],
                dataset.labels[idx],
                f"{dataset.name}/{tag}",
                dataset.num_labels,
            )
        )
    return parts[0], parts[1]


def shift_dataset(dataset: Dataset, offset, *, name: str | None = None) -> Dataset:
    """Translate every input by ``offset`` and clamp back into the support."""
    off = np.asarray(offset, dtype=np.float64)
    shifted = np.clip(dataset.inputs + off, -1.0, 1.0)
    return Dataset(
        shifted, dataset.labels, name or f"{dataset.name}+shift", dataset.num_labels
    )


def dataset_from_config(cfg: dict) -> Dataset:
    """Materialize a dataset reference from its JSON dict form.

    Kinds: ``blobs`` (n_per_class, num_labels, centers, spread, seed, optional
    name/shift) and ``idx`` (images, labels paths, optional add_channel_dim,
    shift).
    """
    kind = cfg.get("kind")
    if kind == "blobs":
        ds = synth_blobs(
            cfg["n_per_class"],
            cfg["num_labels"],
            cfg["centers"],
            cfg["spread"],
            cfg["seed"],
            name=cfg.get("name", "blobs"),
        )
    elif kind == "idx":
        ds = load_idx(
            cfg["images"], cfg["labels"], add_channel_dim=cfg.get("add_channel_dim", False)
        )
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if "shift" in cfg:
        ds = shift_dataset(ds, cfg["shift"], name=cfg.get("name"))
    return ds
