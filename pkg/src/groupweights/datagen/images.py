"""Patch extraction, overlap-averaged reconstruction and binary PGM I/O."""
import numpy as np

from ..exceptions import StructuralError


def patch_grid(shape, size, stride):
    """Top-left corners of all ``size x size`` patches on a regular grid."""
    H, W = shape
    if stride < 1:
        raise StructuralError("stride must be at least 1")
    if size > H or size > W:
        raise StructuralError(f"patch size {size} exceeds image {shape}")
    rows = range(0, H - size + 1, stride)
    cols = range(0, W - size + 1, stride)
    return [(r, c) for r in rows for c in cols]


def extract_patches(image, size=32, stride=16):
    """Cut ``image`` into patches; returns ``(patches, positions)``."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise StructuralError("expected a 2-D grayscale image")
    pos = patch_grid(image.shape, size, stride)
    patches = np.stack([image[r:r + size, c:c + size] for r, c in pos])
    return patches, pos


def reconstruct(patches, positions, shape):
    """Average overlapping patch estimates back into an image.

    Pixels not covered by any patch are set to zero.
    """
    patches = np.asarray(patches, dtype=float)
    if patches.ndim != 3 or len(positions) != patches.shape[0]:
        raise StructuralError("patches and positions do not match")
    size = patches.shape[1]
    acc = np.zeros(shape)
    cnt = np.zeros(shape)
    for p, (r, c) in zip(patches, positions):
        if r + size > shape[0] or c + size > shape[1]:
            raise StructuralError(f"patch at {(r, c)} falls outside {shape}")
        acc[r:r + size, c:c + size] += p
        cnt[r:r + size, c:c + size] += 1
    return np.divide(acc, cnt, out=np.zeros(shape), where=cnt > 0)


def _tokens(buf):
    """Header tokens of a PGM file, skipping comments; yields (token, end offset)."""
    i, n = 2, len(buf)
    while True:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not buf[j:j + 1].isspace() and buf[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise ValueError("truncated PGM header")
        yield buf[i:j], j
        i = j


def read_pgm(path):
    """Read an 8- or 16-bit binary (P5) PGM as a float array."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    tok = _tokens(buf)
    try:
        (w, _), (h, _), (mx, end) = next(tok), next(tok), next(tok)
        w, h, mx = int(w), int(h), int(mx)
    except (StopIteration, ValueError) as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if not 0 < mx < 65536:
        raise ValueError(f"{path}: bad maxval {mx}")
    dtype = np.uint8 if mx < 256 else np.dtype(">u2")
    count = w * h
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=end + 1) \
        if len(buf) >= end + 1 + count * np.dtype(dtype).itemsize else None
    if data is None:
        raise ValueError(f"{path}: expected {count} pixels, file is truncated")
    return data.reshape(h, w).astype(float)


def write_pgm(path, image):
    """Write an image in ``[0, 255]`` as an 8-bit binary PGM (rounded, clipped)."""
    img = np.clip(np.rint(np.asarray(image, dtype=float)), 0, 255).astype(np.uint8)
    if img.ndim != 2:
        raise StructuralError("expected a 2-D grayscale image")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
