"""Binary PGM (P5) and PPM (P6) reading, 16-bit PGM writing.

Images come back as float64 arrays normalised to [0, 1]. Colour PPMs are
reduced to grayscale with luma = 0.299 R + 0.587 G + 0.114 B.
"""

import os

import numpy as np

LUMA = (0.299, 0.587, 0.114)


class PNMError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def _header_tokens(buf, count):
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset of the first payload byte.
    """
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos] in b" \t\r\n":
            pos += 1
        if pos < n and buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\r\n":
                pos += 1
            continue
        if pos >= n:
            raise PNMError("unexpected end of header", pos)
        start = pos
        while pos < n and buf[pos] not in b" \t\r\n#":
            pos += 1
        tokens.append((bytes(buf[start:pos]), start))
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or buf[pos] not in b" \t\r\n":
        raise PNMError("missing whitespace after header", pos)
    return tokens, pos + 1


def _int_token(tok, what):
    raw, offset = tok
    if not raw.isdigit():
        raise PNMError(f"bad {what} {raw!r}", offset)
    return int(raw)


def decode(buf):
    """Decode P5/P6 bytes into a float64 image in [0, 1]."""
    buf = bytes(buf)
    tokens, data_start = _header_tokens(buf, 4)
    magic = tokens[0][0]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported magic {magic!r}", 0)
    width = _int_token(tokens[1], "width")
    height = _int_token(tokens[2], "height")
    maxval = _int_token(tokens[3], "maxval")
    if width < 1 or height < 1:
        raise PNMError("image dimensions must be positive", tokens[1][1])
    if not 0 < maxval < 65536:
        raise PNMError(f"maxval {maxval} outside 1..65535", tokens[3][1])
    channels = 3 if magic == b"P6" else 1
    sample = 1 if maxval < 256 else 2
    need = width * height * channels * sample
    have = len(buf) - data_start
    if have < need:
        raise PNMError(f"truncated payload: need {need} bytes, found {have}", len(buf))
    dtype = np.uint8 if sample == 1 else np.dtype(">u2")
    raw = np.frombuffer(buf, dtype=dtype, count=width * height * channels, offset=data_start)
    img = raw.astype(np.float64).reshape(height, width, channels) / maxval
    if channels == 3:
        return LUMA[0] * img[..., 0] + LUMA[1] * img[..., 1] + LUMA[2] * img[..., 2]
    return img[..., 0]


def encode_pgm16(u):
    """16-bit P5 bytes; values are clamped to [0, 1] and rounded to the nearest level."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {u.shape}")
    q = np.rint(np.clip(u, 0.0, 1.0) * 65535).astype(">u2")
    header = f"P5\n{u.shape[1]} {u.shape[0]}\n65535\n".encode("ascii")
    return header + q.tobytes()


def load_image(path):
    with open(path, "rb") as fh:
        return decode(fh.read())


def save_image(path, u):
    """Write a 16-bit PGM atomically (temporary file then rename)."""
    data = encode_pgm16(u)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
