"""Canvas-sequence export as binary PGM (P5) frames."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .attention import patch_box
from .model import DrawModel


def to_bytes(img: np.ndarray) -> np.ndarray:
    """Map [0, 1] linearly onto 0..255."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray):
    data = to_bytes(img) if img.dtype != np.uint8 else img
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1
    return np.frombuffer(raw, np.uint8, w * h, pos).reshape(h, w)


def box_pixels(gx, gy, delta, N, A, B):
    """0-based inclusive ``(col0, row0, col1, row1)`` of pixels whose centres
    fall inside the patch extent, clipped to the image."""
    x0, y0, x1, y1 = patch_box(gx, gy, delta, N)
    c0 = max(int(np.ceil(x0)), 1) - 1
    r0 = max(int(np.ceil(y0)), 1) - 1
    c1 = min(int(np.floor(x1)), A) - 1
    r1 = min(int(np.floor(y1)), B) - 1
    return c0, r0, c1, r1


def draw_box(img: np.ndarray, gx, gy, delta, sigma2, N, value=255) -> np.ndarray:
    """Outline the patch on a uint8 copy of ``img``; border width grows with sigma."""
    out = img.copy()
    B, A = out.shape
    c0, r0, c1, r1 = box_pixels(gx, gy, delta, N, A, B)
    if c0 > c1 or r0 > r1:
        return out
    t = max(1, int(round(np.sqrt(sigma2))))
    out[r0:min(r0 + t, r1 + 1), c0:c1 + 1] = value
    out[max(r1 - t + 1, r0):r1 + 1, c0:c1 + 1] = value
    out[r0:r1 + 1, c0:min(c0 + t, c1 + 1)] = value
    out[r0:r1 + 1, max(c1 - t + 1, c0):c1 + 1] = value
    return out


def export_sequence(
    model: DrawModel,
    count: int,
    out_dir,
    rng: np.random.Generator,
    annotate: bool = False,
    sample_pixels: bool = False,
) -> list[Path]:
    """Write ``s(c_t)`` for t = 1..T of ``count`` generated images.

    Files are ``sample{k:03d}_t{t:02d}.pgm``; with ``annotate`` and attention,
    ``..._box.pgm`` variants outline the write patch.  ``sample_pixels`` adds a
    ``sample{k:03d}_final.pgm`` Bernoulli sample of the last canvas.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write to {out_dir}: {exc.strerror}") from exc
    cfg = model.config
    sample, _, canvases, params = model.generate(rng, count)
    written = []
    for k in range(count):
        for t, c in enumerate(canvases, 1):
            frame = to_bytes(0.5 * (1.0 + np.tanh(0.5 * c[k])))
            path = out_dir / f"sample{k:03d}_t{t:02d}.pgm"
            write_pgm(path, frame)
            written.append(path)
            if annotate and params:
                p = {key: float(v[k]) for key, v in params[t - 1].items()}
                boxed = draw_box(frame, p["gx"], p["gy"], p["delta"], p["sigma2"], cfg.write_size)
                path = out_dir / f"sample{k:03d}_t{t:02d}_box.pgm"
                write_pgm(path, boxed)
                written.append(path)
        if sample_pixels:
            path = out_dir / f"sample{k:03d}_final.pgm"
            write_pgm(path, sample[k])
            written.append(path)
    return written
