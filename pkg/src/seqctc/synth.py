"""Synthetic digit-string images, dataset persistence, and ingestion.

Strings are rendered from fixed 5x7 dot-matrix glyphs: each digit is
scaled by an integer factor, jittered vertically, placed left to right
with random gaps, and the whole canvas gets salt-and-pepper noise.
Everything derives from one seed; the same spec always produces
byte-identical images and manifest.

On-disk formats: binary 8-bit grayscale PGM (P5) images, ink = 255 on
background 0; a UTF-8 manifest with one `relative/path<TAB>label` record
per line. User-supplied datasets are ingested through the same manifest
contract.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ctc import LabelSequence
from .errors import GenerationError, InvalidSymbolError, ManifestError
from .seeding import derive_rng

_GLYPH_ROWS = {
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": (".###.", "#...#", "....#", "..##.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
}

GLYPH_HEIGHT = 7
GLYPH_WIDTH = 5

GLYPHS = {
    d: np.array([[c == "#" for c in row] for row in rows], dtype=np.uint8)
    for d, rows in _GLYPH_ROWS.items()
}

INK = 255
BACKGROUND = 0
_MARGIN = 1


@dataclass(frozen=True)
class GenSpec:
    """Knobs of the renderer; `length_distribution` maps string length to
    the number of samples of that length."""

    length_distribution: dict
    image_height: int
    image_width: int
    seed: int
    noise_level: float = 0.0
    jitter: int = 0
    spacing: tuple = (1, 2)
    scale_range: tuple = (2, 2)

    def __post_init__(self):
        object.__setattr__(
            self,
            "length_distribution",
            {int(k): int(v) for k, v in self.length_distribution.items()},
        )
        if any(n < 1 or c < 0 for n, c in self.length_distribution.items()):
            raise GenerationError("length distribution needs lengths >= 1 and counts >= 0")
        if not 0.0 <= self.noise_level < 0.5:
            raise GenerationError(f"noise_level must lie in [0, 0.5), got {self.noise_level}")
        if self.jitter < 0:
            raise GenerationError("jitter must be >= 0")
        lo, hi = self.spacing
        if not 0 <= lo <= hi:
            raise GenerationError(f"spacing bounds must satisfy 0 <= min <= max, got {self.spacing}")
        slo, shi = self.scale_range
        if not 1 <= slo <= shi:
            raise GenerationError(f"scale bounds must satisfy 1 <= min <= max, got {self.scale_range}")
        if self.image_height < 1 or self.image_width < 1:
            raise GenerationError("canvas must be at least 1x1")

    def worst_case_width(self, length):
        shi = self.scale_range[1]
        return 2 * _MARGIN + length * GLYPH_WIDTH * shi + (length - 1) * self.spacing[1]

    def validate_fit(self):
        shi = self.scale_range[1]
        if GLYPH_HEIGHT * shi + 2 * self.jitter + 2 * _MARGIN > self.image_height:
            raise GenerationError(
                f"glyphs at scale {shi} with jitter {self.jitter} exceed canvas height {self.image_height}"
            )
        for length in sorted(self.length_distribution):
            if self.length_distribution[length] == 0:
                continue
            need = self.worst_case_width(length)
            if need > self.image_width:
                raise GenerationError(
                    f"length {length} can need {need} px but the canvas is {self.image_width} wide"
                )


@dataclass
class SampleManifest:
    """Dataset root plus ordered (relative path, label string) records."""

    root: Path
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)


def render_string(digits: str, spec: GenSpec, rng) -> np.ndarray:
    """One canvas; draw order (scales, gaps, jitters, noise) is fixed so a
    given generator state always yields the same image."""
    canvas = np.full((spec.image_height, spec.image_width), BACKGROUND, dtype=np.uint8)
    n = len(digits)
    scales = rng.integers(spec.scale_range[0], spec.scale_range[1] + 1, size=n)
    gaps = rng.integers(spec.spacing[0], spec.spacing[1] + 1, size=max(n - 1, 0))
    jitters = (
        rng.integers(-spec.jitter, spec.jitter + 1, size=n) if spec.jitter else np.zeros(n, int)
    )
    x = _MARGIN
    for k, ch in enumerate(digits):
        if ch not in GLYPHS:
            raise InvalidSymbolError(f"cannot render non-digit character {ch!r}")
        s = int(scales[k])
        glyph = np.kron(GLYPHS[ch], np.ones((s, s), dtype=np.uint8)) * INK
        gh, gw = glyph.shape
        y = (spec.image_height - gh) // 2 + int(jitters[k])
        y = min(max(y, 0), spec.image_height - gh)
        if x + gw > spec.image_width - _MARGIN:
            raise GenerationError(
                f"length {n} string overflowed the canvas at glyph {k + 1}"
            )
        canvas[y : y + gh, x : x + gw] = np.maximum(canvas[y : y + gh, x : x + gw], glyph)
        x += gw + (int(gaps[k]) if k < n - 1 else 0)
    if spec.noise_level > 0.0:
        flips = rng.random(canvas.shape) < spec.noise_level
        canvas[flips] = INK - canvas[flips]
    return canvas


def generate(spec: GenSpec, root) -> SampleManifest:
    """Render the whole distribution under `root` (images/ plus
    manifest.tsv) and return the manifest. Reruns with the same spec
    produce byte-identical trees."""
    spec.validate_fit()
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    records = []
    index = 0
    for length in sorted(spec.length_distribution):
        for _ in range(spec.length_distribution[length]):
            rng = derive_rng(spec.seed, "sample", index)
            digits = "".join(str(d) for d in rng.integers(0, 10, size=length))
            image = render_string(digits, spec, rng)
            rel = f"images/{index:06d}.pgm"
            write_pgm(root / rel, image)
            records.append((rel, digits))
            index += 1
    manifest = SampleManifest(root=root, records=records)
    save_manifest(manifest, root / "manifest.tsv")
    return manifest


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise GenerationError(f"PGM writer needs a 2-D uint8 array, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    # header = magic, width, height, maxval as whitespace-separated tokens;
    # '#' starts a comment running to end of line
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        ch = data[pos : pos + 1]
        if ch == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                break
            continue
        if ch.isspace():
            pos += 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise ManifestError(f"{path} is not a binary PGM (P5) file")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise ManifestError(f"{path} has a malformed PGM header") from None
    if maxval != 255 or w < 1 or h < 1:
        raise ManifestError(f"{path}: unsupported PGM geometry {w}x{h} maxval {maxval}")
    pixels = data[pos + 1 : pos + 1 + w * h]
    if len(pixels) != w * h:
        raise ManifestError(f"{path}: expected {w * h} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).copy()


def save_manifest(manifest: SampleManifest, path) -> None:
    lines = [f"{rel}\t{label}\n" for rel, label in manifest.records]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.writelines(lines)


def load_manifest(path) -> SampleManifest:
    path = Path(path)
    root = path.parent
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ManifestError(f"{path}:{lineno}: expected 'path<TAB>label', got {line!r}")
            rel, label = parts
            if not label:
                raise InvalidSymbolError(f"{path}:{lineno}: empty label")
            if not all(c in _GLYPH_ROWS for c in label):
                raise InvalidSymbolError(f"{path}:{lineno}: label {label!r} has non-digit characters")
            if rel in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate image path {rel!r}")
            seen.add(rel)
            if not (root / rel).is_file():
                raise ManifestError(f"{path}:{lineno}: image {rel!r} does not exist")
            records.append((rel, label))
    return SampleManifest(root=root, records=records)


def resize_to(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Aspect-preserving nearest-neighbor fit into height x width, anchored
    top-left, padded with background. Values pass through unchanged."""
    h, w = image.shape
    scale = min(height / h, width / w)
    nh = max(1, min(height, int(round(h * scale))))
    nw = max(1, min(width, int(round(w * scale))))
    rows = (np.arange(nh) * h) // nh
    cols = (np.arange(nw) * w) // nw
    resized = image[rows][:, cols]
    out = np.full((height, width), BACKGROUND, dtype=image.dtype)
    out[:nh, :nw] = resized
    return out


def load_sample(manifest: SampleManifest, index: int, height: int, width: int):
    """(1 x height x width float64 image in [0,1], LabelSequence)."""
    rel, label = manifest.records[index]
    raw = read_pgm(manifest.root / rel)
    fitted = resize_to(raw, height, width)
    image = fitted.astype(np.float64) / 255.0
    symbols = tuple(int(c) for c in label)
    return image[None], LabelSequence(symbols)
