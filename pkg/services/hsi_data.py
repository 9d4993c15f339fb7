"""
Гиперспектральные кубы: чтение/запись, синтетические сцены и деградация
(bicubic-даунсемплинг, гауссов шум по SNR, нарезка на пары, сплит train/test).

Все функции чистые: результат зависит только от аргументов и явного seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.ndimage import gaussian_filter

from config import RADIANCE_MAX, SUPPORTED_SCALES, WAVELENGTH_RANGE_NM

logger = logging.getLogger(__name__)

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"


class CubeFormatError(ValueError):
    """Файл куба повреждён или не совпадает с заголовком"""
    pass


class CubeValidationError(ValueError):
    """Куб или параметры операции нарушают инварианты"""
    pass


# ---------- HSICube ----------

@dataclass(frozen=True, eq=False)
class HSICube:
    # (bands, height, width), band-sequential, float32
    data: np.ndarray
    wavelengths: tuple[float, ...]

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        self.validate()

    @property
    def bands(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    @property
    def width(self) -> int:
        return int(self.data.shape[2])

    def validate(self) -> None:
        if self.data.ndim != 3:
            raise CubeValidationError(f"cube data must be 3-D (bands, height, width), got ndim={self.data.ndim}")
        if len(self.wavelengths) != self.bands:
            raise CubeValidationError(
                f"{len(self.wavelengths)} wavelengths for {self.bands} bands"
            )
        if self.bands > 1 and not np.all(np.diff(np.asarray(self.wavelengths)) > 0):
            raise CubeValidationError("wavelengths must be strictly increasing")
        if not np.isfinite(self.data).all():
            raise CubeValidationError("cube contains non-finite values")

    def with_data(self, data: np.ndarray) -> "HSICube":
        return HSICube(data=data, wavelengths=self.wavelengths)

    def band_subset(self, indices: Iterable[int]) -> "HSICube":
        idx = list(indices)
        return HSICube(data=self.data[idx], wavelengths=tuple(self.wavelengths[i] for i in idx))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HSICube):
            return NotImplemented
        return (
            self.data.shape == other.data.shape
            and self.wavelengths == other.wavelengths
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None  # type: ignore[assignment]


def default_wavelengths(bands: int) -> tuple[float, ...]:
    lo, hi = WAVELENGTH_RANGE_NM
    if bands == 1:
        return (lo,)
    return tuple(float(w) for w in np.linspace(lo, hi, bands))


# ---------- header grammar (shared with checkpoint archives) ----------

def parse_header_text(text: str) -> dict[str, str]:
    """
    Строки вида `key = value`, ключи регистронезависимые.
    Пустые строки и комментарии (#, ;) пропускаются.
    """
    out: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        if "=" not in line:
            raise CubeFormatError(f"bad header line: {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().lower()] = value.strip()
    return out


def format_header_text(items: dict[str, object]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in items.items())


def parse_float_list(value: str) -> list[float]:
    inner = value.strip()
    if inner.startswith("{") and inner.endswith("}"):
        inner = inner[1:-1]
    parts = [p.strip() for p in inner.split(",") if p.strip()]
    return [float(p) for p in parts]


def format_float_list(values: Iterable[float]) -> str:
    # repr() даёт кратчайшую запись, которая читается обратно бит-в-бит
    return "{" + ", ".join(repr(float(v)) for v in values) + "}"


def cube_paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix.lower() in (".hdr", ".raw"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".hdr"), p.with_name(p.name + ".raw")


# ---------- I/O ----------

def load_cube(path: str | Path) -> HSICube:
    hdr_path, raw_path = cube_paths(path)
    if not hdr_path.exists():
        raise FileNotFoundError(f"cube header not found: {hdr_path}")
    if not raw_path.exists():
        raise FileNotFoundError(f"cube payload not found: {raw_path}")

    header = parse_header_text(hdr_path.read_text(encoding="utf-8"))
    try:
        height = int(header["height"])
        width = int(header["width"])
        bands = int(header["bands"])
    except KeyError as e:
        raise CubeFormatError(f"header {hdr_path} misses key {e.args[0]!r}") from e

    dtype = header.get("dtype", "f32le").lower()
    interleave = header.get("interleave", "bsq").lower()
    if dtype != "f32le":
        raise CubeFormatError(f"unsupported dtype {dtype!r}, only f32le")
    if interleave != "bsq":
        raise CubeFormatError(f"unsupported interleave {interleave!r}, only bsq")

    payload = np.fromfile(raw_path, dtype="<f4")
    expected = height * width * bands
    if payload.size != expected:
        raise CubeFormatError(
            f"payload holds {payload.size} values, header declares {height}x{width}x{bands} = {expected}"
        )

    if "wavelengths" in header:
        wavelengths = parse_float_list(header["wavelengths"])
    else:
        wavelengths = list(default_wavelengths(bands))

    try:
        return HSICube(
            data=payload.reshape(bands, height, width).astype(np.float32),
            wavelengths=tuple(wavelengths),
        )
    except CubeValidationError as e:
        raise CubeFormatError(f"{hdr_path}: {e}") from e


def save_cube(cube: HSICube, path: str | Path) -> None:
    cube.validate()
    hdr_path, raw_path = cube_paths(path)

    header = format_header_text({
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "dtype": "f32le",
        "interleave": "bsq",
        "wavelengths": format_float_list(cube.wavelengths),
    })
    try:
        hdr_path.parent.mkdir(parents=True, exist_ok=True)
        raw_path.write_bytes(cube.data.astype("<f4").tobytes(order="C"))
        hdr_path.write_text(header, encoding="utf-8")
    except OSError as e:
        raise CubeFormatError(f"cannot write cube to {hdr_path.parent}: {e}") from e

    logger.debug("saved cube %sx%sx%s -> %s", cube.height, cube.width, cube.bands, raw_path)


def normalize_radiance(cube: HSICube) -> HSICube:
    """Физическая радиация -> [0, 255] (min-max по всему кубу)."""
    data = cube.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi - lo <= 0:
        return cube.with_data(np.zeros_like(data))
    return cube.with_data((data - lo) / (hi - lo) * RADIANCE_MAX)


# ---------- synthetic scenes ----------

@dataclass(frozen=True)
class SynthSpec:
    height: int
    width: int
    bands: int
    n_endmembers: int = 4
    smoothness: float = 8.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_endmembers < 2:
            raise CubeValidationError("n_endmembers must be >= 2")
        if not self.smoothness > 0:
            raise CubeValidationError("smoothness must be > 0")
        if min(self.height, self.width, self.bands) < 1:
            raise CubeValidationError("height, width and bands must be positive")


@dataclass(frozen=True)
class SynthScene:
    cube: HSICube
    endmembers: np.ndarray   # (n_endmembers, bands)
    abundances: np.ndarray   # (n_endmembers, height, width), сумма по оси 0 == 1


def _endmember_signature(rng: np.random.Generator, wl: np.ndarray) -> np.ndarray:
    # базовая линия + 2-3 гауссовых пика + иногда "red edge" как у растительности
    sig = np.full(wl.shape, rng.uniform(10.0, 50.0))
    for _ in range(int(rng.integers(2, 4))):
        center = rng.uniform(wl[0], wl[-1])
        width = rng.uniform(30.0, 150.0)
        amp = rng.uniform(30.0, 150.0)
        sig += amp * np.exp(-0.5 * ((wl - center) / width) ** 2)
    if rng.random() < 0.5:
        sig += rng.uniform(40.0, 100.0) / (1.0 + np.exp(-(wl - 705.0) / 15.0))
    peak = sig.max()
    if peak > 250.0:
        sig *= 250.0 / peak
    return sig


def synth_scene(spec: SynthSpec) -> SynthScene:
    rng = np.random.default_rng(spec.seed)
    wavelengths = default_wavelengths(spec.bands)
    wl = np.asarray(wavelengths)

    endmembers = np.stack([_endmember_signature(rng, wl) for _ in range(spec.n_endmembers)])

    fields = rng.standard_normal((spec.n_endmembers, spec.height, spec.width))
    for e in range(spec.n_endmembers):
        f = gaussian_filter(fields[e], sigma=spec.smoothness, mode="wrap")
        std = f.std()
        fields[e] = 2.5 * f / std if std > 0 else f

    # softmax по эндмемберам -> выпуклая смесь
    fields -= fields.max(axis=0, keepdims=True)
    weights = np.exp(fields)
    abundances = weights / weights.sum(axis=0, keepdims=True)

    data = np.einsum("eb,ehw->bhw", endmembers, abundances)
    cube = HSICube(data=np.clip(data, 0.0, RADIANCE_MAX), wavelengths=wavelengths)
    return SynthScene(cube=cube, endmembers=endmembers, abundances=abundances)


def synth_cube(spec: SynthSpec) -> HSICube:
    return synth_scene(spec).cube


# ---------- bicubic resampling ----------

def _cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    absx = np.abs(x)
    absx2 = absx * absx
    absx3 = absx2 * absx
    near = (a + 2.0) * absx3 - (a + 3.0) * absx2 + 1.0
    far = a * absx3 - 5.0 * a * absx2 + 8.0 * a * absx - 4.0 * a
    return np.where(absx <= 1.0, near, np.where(absx < 2.0, far, 0.0))


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.mod(idx, period)
    return np.where(m >= n, period - m, m)


def resample_matrix(in_len: int, out_len: int, antialias: bool = False) -> np.ndarray:
    """
    Матрица (out_len, in_len) одномерной bicubic-интерполяции
    (Catmull-Rom, a = -0.5), центры пикселей по полупиксельной сетке,
    границы reflect. При antialias=False ядро не растягивается при уменьшении.
    """
    scale = out_len / in_len
    stretch = scale if (antialias and scale < 1.0) else 1.0
    support = 2.0 / stretch

    centers = (np.arange(out_len) + 0.5) / scale - 0.5
    n_taps = int(math.ceil(2.0 * support)) + 1
    first = np.floor(centers - support).astype(np.int64) + 1
    taps = first[:, None] + np.arange(n_taps)[None, :]

    weights = _cubic((centers[:, None] - taps) * stretch)
    if stretch != 1.0:
        weights = weights * stretch
        weights = weights / weights.sum(axis=1, keepdims=True)

    out = np.zeros((out_len, in_len), dtype=np.float64)
    cols = _reflect_index(taps, in_len)
    rows = np.repeat(np.arange(out_len), n_taps)
    np.add.at(out, (rows, cols.ravel()), weights.ravel())
    return out


def _check_scale(scale: int) -> None:
    if scale not in SUPPORTED_SCALES:
        raise CubeValidationError(f"scale must be one of {SUPPORTED_SCALES}, got {scale}")


def bicubic_resize(cube: HSICube, out_height: int, out_width: int, antialias: bool = False) -> HSICube:
    wh = resample_matrix(cube.height, out_height, antialias)
    ww = resample_matrix(cube.width, out_width, antialias)
    data = np.matmul(np.matmul(wh, cube.data.astype(np.float64)), ww.T)
    return cube.with_data(data)


def bicubic_downsample(cube: HSICube, scale: int) -> HSICube:
    _check_scale(scale)
    if cube.height % scale or cube.width % scale:
        raise CubeValidationError(
            f"{cube.height}x{cube.width} is not divisible by scale {scale}"
        )
    return bicubic_resize(cube, cube.height // scale, cube.width // scale)


def bicubic_upsample(cube: HSICube, scale: int) -> HSICube:
    _check_scale(scale)
    return bicubic_resize(cube, cube.height * scale, cube.width * scale)


# ---------- noise ----------

def add_noise_snr(cube: HSICube, snr_db: float, seed: int) -> HSICube:
    """
    Гауссов белый шум независимо по каналам:
    10*log10(P_signal / P_noise) == snr_db для каждого канала.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return cube
    if not math.isfinite(snr_db) or not (0.0 < snr_db < 200.0):
        raise CubeValidationError(f"snr_db must be inf or in (0, 200), got {snr_db}")

    rng = np.random.default_rng(seed)
    data = cube.data.astype(np.float64)
    power = np.mean(data * data, axis=(1, 2))
    sigma = np.sqrt(power / (10.0 ** (snr_db / 10.0)))
    noise = rng.standard_normal(data.shape) * sigma[:, None, None]
    return cube.with_data(data + noise)


# ---------- pairs & datasets ----------

@dataclass(frozen=True)
class PatchPair:
    lr: HSICube
    hr: HSICube
    scale: int
    source_id: str = ""

    def __post_init__(self) -> None:
        if (
            self.hr.height != self.lr.height * self.scale
            or self.hr.width != self.lr.width * self.scale
            or self.hr.bands != self.lr.bands
        ):
            raise CubeValidationError(
                f"pair {self.source_id!r}: HR {self.hr.height}x{self.hr.width}x{self.hr.bands} "
                f"does not match LR {self.lr.height}x{self.lr.width}x{self.lr.bands} at x{self.scale}"
            )


@dataclass(frozen=True)
class PatchPairDataset:
    pairs: tuple[PatchPair, ...]
    split: tuple[str, ...] = field(default=())
    seed: int = 0

    def __post_init__(self) -> None:
        pairs = tuple(self.pairs)
        object.__setattr__(self, "pairs", pairs)
        split = tuple(self.split) or (SPLIT_TRAIN,) * len(pairs)
        if len(split) != len(pairs):
            raise CubeValidationError("split tags must match pairs one to one")
        if any(s not in (SPLIT_TRAIN, SPLIT_TEST) for s in split):
            raise CubeValidationError("split tags must be 'train' or 'test'")
        object.__setattr__(self, "split", split)

    def __len__(self) -> int:
        return len(self.pairs)

    def subset(self, tag: str) -> list[PatchPair]:
        return [p for p, s in zip(self.pairs, self.split) if s == tag]

    def train_pairs(self) -> list[PatchPair]:
        return self.subset(SPLIT_TRAIN)

    def test_pairs(self) -> list[PatchPair]:
        return self.subset(SPLIT_TEST)

    def concat(self, other: "PatchPairDataset") -> "PatchPairDataset":
        return PatchPairDataset(
            pairs=self.pairs + other.pairs,
            split=self.split + other.split,
            seed=self.seed,
        )


def crop_pairs(
    hr: HSICube,
    scale: int,
    hr_patch: int,
    stride: int | None = None,
    source_id: str = "scene",
) -> PatchPairDataset:
    _check_scale(scale)
    stride = hr_patch if stride is None else stride
    if hr_patch % scale:
        raise CubeValidationError(f"hr_patch {hr_patch} is not divisible by scale {scale}")
    if stride < 1:
        raise CubeValidationError("stride must be >= 1")
    if hr_patch > hr.height or hr_patch > hr.width:
        raise CubeValidationError(
            f"patch {hr_patch} is larger than cube {hr.height}x{hr.width}"
        )

    pairs: list[PatchPair] = []
    for y in range(0, hr.height - hr_patch + 1, stride):
        for x in range(0, hr.width - hr_patch + 1, stride):
            hr_tile = hr.with_data(hr.data[:, y:y + hr_patch, x:x + hr_patch])
            lr_tile = bicubic_downsample(hr_tile, scale)
            pairs.append(PatchPair(lr=lr_tile, hr=hr_tile, scale=scale, source_id=f"{source_id}@y{y}x{x}"))

    return PatchPairDataset(pairs=tuple(pairs))


def split_dataset(ds: PatchPairDataset, train_ratio: float, seed: int) -> PatchPairDataset:
    if not (0.0 < train_ratio < 1.0):
        raise CubeValidationError(f"train_ratio must be in (0, 1), got {train_ratio}")

    n = len(ds)
    n_train = int(math.floor(n * train_ratio + 1e-9))
    order = np.random.default_rng(seed).permutation(n)

    tags = [SPLIT_TEST] * n
    for i in order[:n_train]:
        tags[int(i)] = SPLIT_TRAIN
    return PatchPairDataset(pairs=ds.pairs, split=tuple(tags), seed=seed)


def noisy_lr(ds: PatchPairDataset, snr_db: float, seed: int) -> PatchPairDataset:
    """Шум добавляется к LR уже после даунсемплинга."""
    if math.isinf(snr_db) and snr_db > 0:
        return ds
    pairs = tuple(
        PatchPair(lr=add_noise_snr(p.lr, snr_db, seed + i), hr=p.hr, scale=p.scale, source_id=p.source_id)
        for i, p in enumerate(ds.pairs)
    )
    return PatchPairDataset(pairs=pairs, split=ds.split, seed=ds.seed)


def build_dataset(
    scenes: list[HSICube],
    scale: int,
    hr_patch: int,
    stride: int,
    train_ratio: float,
    snr_db: float,
    seed: int,
) -> PatchPairDataset:
    if not scenes:
        raise CubeValidationError("no scenes to build a dataset from")

    ds = PatchPairDataset(pairs=())
    for i, scene in enumerate(scenes):
        ds = ds.concat(crop_pairs(scene, scale, hr_patch, stride, source_id=f"scene{i}"))

    ds = noisy_lr(ds, snr_db, seed)
    ds = split_dataset(ds, train_ratio, seed)
    logger.info(
        "dataset: %s pairs (%s train / %s test), x%s, snr=%s dB",
        len(ds), len(ds.train_pairs()), len(ds.test_pairs()), scale, snr_db,
    )
    return ds
