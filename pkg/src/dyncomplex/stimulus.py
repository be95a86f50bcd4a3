"""Synthetic and file-backed visual stimuli.

Frames are 2-D float arrays ``(height, width)`` of luminance in [0, 1].
A :class:`VideoSequence` stacks them as ``(n_frames, height, width)``
float32 together with the sample rate in Hz.

Spatial frequency is expressed in cycles per full 360 degree visual circle
("units per circle"); ``fov_deg`` maps the image width onto visual angle.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._validation import StimulusError, check_frame

__all__ = [
    "GratingSpec",
    "VideoSequence",
    "generate_grating",
    "drift_texture",
    "natural_texture",
    "load_image",
    "save_pgm",
    "save_video",
    "load_video",
    "VIDEO_MAGIC",
]

VIDEO_MAGIC = b"AVDMVID1"
# magic, width, height, n_frames, sample_rate
_HEADER = struct.Struct("<8sIIId")


@dataclass(frozen=True)
class GratingSpec:
    """Drifting sine-wave grating.

    Parameters
    ----------
    sf_upc : float
        Spatial frequency in cycles per 360 degrees.
    tf_hz : float
        Temporal frequency in Hz.
    contrast : float
        Michelson contrast in [0, 1].
    mean_luminance : float
        Mean luminance in (0, 1).
    phase0 : float
        Initial phase in radians.
    direction : int
        +1 drifts towards increasing x, -1 the other way.
    fov_deg : float
        Horizontal field of view mapped onto the frame width.
    """

    sf_upc: float = 10.0
    tf_hz: float = 1.0
    contrast: float = 1.0
    mean_luminance: float = 0.5
    phase0: float = 0.0
    direction: int = 1
    fov_deg: float = 360.0

    def __post_init__(self):
        if not self.sf_upc > 0:
            raise StimulusError(f"sf_upc must be > 0, got {self.sf_upc}")
        if not self.tf_hz >= 0:
            raise StimulusError(f"tf_hz must be >= 0, got {self.tf_hz}")
        if not 0.0 <= self.contrast <= 1.0:
            raise StimulusError(f"contrast must lie in [0, 1], got {self.contrast}")
        if not 0.0 < self.mean_luminance < 1.0:
            raise StimulusError(
                f"mean_luminance must lie in (0, 1), got {self.mean_luminance}"
            )
        amp = self.contrast * self.mean_luminance
        if self.mean_luminance - amp < 0.0 or self.mean_luminance + amp > 1.0:
            raise StimulusError(
                "luminance range violation: mean_luminance +/- contrast*mean_luminance "
                f"= [{self.mean_luminance - amp:.6g}, {self.mean_luminance + amp:.6g}] "
                "leaves [0, 1]"
            )
        if self.direction not in (1, -1):
            raise StimulusError(f"direction must be +1 or -1, got {self.direction}")
        if not self.fov_deg > 0:
            raise StimulusError(f"fov_deg must be > 0, got {self.fov_deg}")

    @property
    def cycles_per_image(self) -> float:
        """Cycles across the frame width."""
        return self.sf_upc * self.fov_deg / 360.0

    @property
    def period_deg(self) -> float:
        """Spatial period in degrees of visual angle."""
        return 360.0 / self.sf_upc


@dataclass
class VideoSequence:
    """Grayscale video: ``frames`` has shape ``(n_frames, height, width)``."""

    frames: np.ndarray
    sample_rate: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float32)
        if frames.ndim == 2:
            frames = frames[None]
        if frames.ndim != 3:
            raise StimulusError(
                f"frames must have shape (n_frames, height, width), got {frames.shape}"
            )
        if frames.shape[1] == 0 or frames.shape[2] == 0:
            raise StimulusError(f"frames must be non-empty, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise StimulusError("frames contain non-finite values")
        if frames.size and (frames.min() < 0.0 or frames.max() > 1.0):
            raise StimulusError(
                f"pixel values must lie in [0, 1], got [{frames.min()}, {frames.max()}]"
            )
        if not self.sample_rate > 0:
            raise StimulusError(f"sample_rate must be > 0, got {self.sample_rate}")
        self.frames = frames
        self.sample_rate = float(self.sample_rate)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _check_nyquist(tf_hz, sample_rate):
    if sample_rate < 2.0 * tf_hz:
        raise StimulusError(
            f"Nyquist violation: sample_rate {sample_rate:g} Hz < 2 x tf {tf_hz:g} Hz "
            f"(need >= {2.0 * tf_hz:g} Hz)"
        )


def _n_frames(duration, sample_rate):
    if not duration > 0:
        raise StimulusError(f"duration must be > 0, got {duration}")
    # round() keeps e.g. 2 s at 300 Hz at exactly 600 frames
    return max(1, int(round(duration * sample_rate)))


def generate_grating(spec, duration, sample_rate, width=100, height=100):
    """Render a drifting vertical-bar grating.

    Pixel ``(x, y)`` of frame ``t`` is
    ``L * (1 + C * sin(2*pi*(f*x/width - tf*t/rate*direction) + phase0))``
    with ``f = spec.cycles_per_image``; rows are identical.
    """
    if not sample_rate > 0:
        raise StimulusError(f"sample_rate must be > 0, got {sample_rate}")
    _check_nyquist(spec.tf_hz, sample_rate)
    if width <= 0 or height <= 0:
        raise StimulusError(f"width and height must be > 0, got {width}x{height}")
    n = _n_frames(duration, sample_rate)

    x = np.arange(width, dtype=np.float64)
    t = np.arange(n, dtype=np.float64)
    phase = 2.0 * np.pi * (
        spec.cycles_per_image * x[None, :] / width
        - spec.tf_hz * t[:, None] / sample_rate * spec.direction
    ) + spec.phase0
    rows = spec.mean_luminance * (1.0 + spec.contrast * np.sin(phase))
    np.clip(rows, 0.0, 1.0, out=rows)
    frames = np.broadcast_to(rows[:, None, :], (n, height, width))
    return VideoSequence(frames, sample_rate, metadata={"stimulus": "grating", **spec.__dict__})


def drift_texture(texture, tf_hz, cycle_px, duration, sample_rate):
    """Translate ``texture`` horizontally with wraparound.

    One temporal cycle moves the texture by ``cycle_px`` pixels, so frame ``t``
    is shifted by ``tf_hz * t / sample_rate * cycle_px`` pixels. Shifts are
    rounded to whole pixels, which keeps every frame a pure permutation of
    the texture columns.
    """
    texture = np.asarray(texture, dtype=np.float64)
    if texture.size == 0:
        raise StimulusError("texture is empty")
    texture = check_frame(texture)
    if not cycle_px > 0:
        raise StimulusError(f"cycle_px must be > 0, got {cycle_px}")
    if not tf_hz >= 0:
        raise StimulusError(f"tf_hz must be >= 0, got {tf_hz}")
    if not sample_rate > 0:
        raise StimulusError(f"sample_rate must be > 0, got {sample_rate}")
    _check_nyquist(tf_hz, sample_rate)
    n = _n_frames(duration, sample_rate)
    width = texture.shape[1]

    shifts = np.rint(tf_hz * np.arange(n) / sample_rate * cycle_px).astype(np.int64) % width
    cols = (np.arange(width)[None, :] - shifts[:, None]) % width
    frames = texture[:, cols].transpose(1, 0, 2)
    return VideoSequence(
        frames,
        sample_rate,
        metadata={"stimulus": "texture", "tf_hz": tf_hz, "cycle_px": cycle_px},
    )


def natural_texture(width=100, height=100, seed=0, beta=1.0, contrast=0.8, mean=0.5):
    """Horizontally tileable 1/f^beta noise texture in [0, 1].

    Stands in for a cluttered natural scene: amplitude spectrum falls as
    ``1/f**beta`` with random phases, synthesised on a periodic grid so the
    result wraps seamlessly.
    """
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.rfftfreq(width)[None, :]
    f = np.hypot(fx, fy)
    f[0, 0] = 1.0
    amp = f**-beta
    amp[0, 0] = 0.0
    phase = rng.uniform(0.0, 2.0 * np.pi, size=amp.shape)
    img = np.fft.irfft2(amp * np.exp(1j * phase), s=(height, width))
    img -= img.mean()
    peak = np.abs(img).max()
    if peak > 0:
        img *= contrast * mean / peak
    return np.clip(mean + img, 0.0, 1.0)


# --------------------------------------------------------------------------
# File I/O
# --------------------------------------------------------------------------

def _read_pnm(data, path):
    """Parse binary PGM (P5) or PPM (P6) with maxval <= 255 or 16-bit."""
    tokens = []
    pos = 0
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise StimulusError(f"{path}: unsupported magic {magic!r}, expected P5 or P6")
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise StimulusError(f"{path}: truncated header")
        try:
            tokens.append(int(data[start:pos]))
        except ValueError:
            raise StimulusError(f"{path}: malformed header token {data[start:pos]!r}") from None
    pos += 1  # single whitespace after maxval
    width, height, maxval = tokens
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise StimulusError(f"{path}: invalid header values {tokens}")
    channels = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    raw = data[pos : pos + need]
    if len(raw) != need:
        raise StimulusError(f"{path}: expected {need} pixel bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(height, width, channels)
    return arr, maxval


def load_image(path):
    """Load an image as a luminance frame in [0, 1].

    PGM/PPM are parsed natively; other formats go through Pillow. Colour
    images are converted with ``0.299 R + 0.587 G + 0.114 B``.
    """
    path = Path(path)
    if not path.exists():
        raise StimulusError(f"{path}: no such file")
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        arr, maxval = _read_pnm(data, path)
    else:
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(path) as im:
                im = im.convert("L") if im.mode in ("1", "L", "P") else im.convert("RGB")
                arr = np.asarray(im, dtype=np.float64)
        except (UnidentifiedImageError, OSError) as exc:
            raise StimulusError(f"{path}: cannot parse image ({exc})") from None
        if arr.ndim == 2:
            arr = arr[:, :, None]
        maxval = 255
    if arr.shape[2] == 3:
        lum = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    else:
        lum = arr[:, :, 0]
    return lum / maxval


def save_pgm(frame, path):
    """Write a frame as 8-bit binary PGM (P5)."""
    frame = check_frame(frame)
    h, w = frame.shape
    pix = np.rint(frame * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(pix.tobytes())


def save_video(seq, path):
    """Write the native raw container (header + little-endian float32 frames)."""
    n, h, w = seq.frames.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(VIDEO_MAGIC, w, h, n, seq.sample_rate))
        fh.write(np.ascontiguousarray(seq.frames, dtype="<f4").tobytes())


def load_video(path):
    path = Path(path)
    if not path.exists():
        raise StimulusError(f"{path}: no such file")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise StimulusError(f"{path}: file shorter than header ({len(data)} bytes)")
    magic, w, h, n, rate = _HEADER.unpack_from(data)
    if magic != VIDEO_MAGIC:
        raise StimulusError(f"{path}: bad magic {magic!r}")
    need = n * h * w * 4
    body = data[_HEADER.size :]
    if len(body) != need:
        raise StimulusError(f"{path}: expected {need} data bytes for {n}x{h}x{w}, found {len(body)}")
    frames = np.frombuffer(body, dtype="<f4").reshape(n, h, w)
    return VideoSequence(frames.copy(), rate)
