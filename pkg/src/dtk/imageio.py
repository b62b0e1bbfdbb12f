"""PGM (P5) and Y4M (4:2:0) readers and writers."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    """Input file is not a supported PGM or Y4M image."""


@dataclass
class Video:
    frames: list[list[np.ndarray]]  # each frame: [Y] or [Y, Cb, Cr]
    bit_depth: int = 8
    fps: tuple[int, int] = (30, 1)
    extra: list[str] = field(default_factory=list)

    @property
    def width(self) -> int:
        return self.frames[0][0].shape[1]

    @property
    def height(self) -> int:
        return self.frames[0][0].shape[0]

    @property
    def fps_value(self) -> float:
        return self.fps[0] / self.fps[1]


def _depth_for_maxval(maxval: int) -> int:
    if maxval == 255:
        return 8
    if maxval == 1023:
        return 10
    raise ImageFormatError(f"unsupported PGM maxval {maxval} (expected 255 or 1023)")


def parse_pgm(data: bytes) -> tuple[np.ndarray, int]:
    """Returns (plane, bit depth)."""
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        m = re.compile(rb"\s*(#[^\n]*\n\s*)*").match(data, pos)
        pos = m.end()
        m = re.compile(rb"\S+").match(data, pos)
        if m is None:
            raise ImageFormatError("truncated PGM header")
        fields.append(m.group())
        pos = m.end()
    if fields[0] != b"P5":
        raise ImageFormatError("not a binary PGM (P5) file")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as e:
        raise ImageFormatError("malformed PGM header") from e
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError("malformed PGM header")
    pos += 1
    depth = _depth_for_maxval(maxval)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if w <= 0 or h <= 0 or len(data) - pos < need:
        raise ImageFormatError("PGM pixel data truncated")
    plane = np.frombuffer(data, dtype=dtype, count=w * h, offset=pos).reshape(h, w).astype(np.int64)
    if plane.max(initial=0) > maxval:
        raise ImageFormatError("PGM sample exceeds maxval")
    return plane, depth


def read_pgm(path) -> tuple[np.ndarray, int]:
    return parse_pgm(Path(path).read_bytes())


def format_pgm(plane: np.ndarray, bit_depth: int = 8) -> bytes:
    plane = np.asarray(plane)
    h, w = plane.shape
    maxval = (1 << bit_depth) - 1
    dtype = ">u2" if maxval > 255 else "u1"
    body = np.clip(plane, 0, maxval).astype(dtype).tobytes()
    return f"P5\n{w} {h}\n{maxval}\n".encode() + body


def write_pgm(path, plane: np.ndarray, bit_depth: int = 8) -> None:
    Path(path).write_bytes(format_pgm(plane, bit_depth))


_Y4M_COLOR = {"420": 8, "420jpeg": 8, "420mpeg2": 8, "420paldv": 8, "420p10": 10}


def parse_y4m(data: bytes) -> Video:
    end = data.find(b"\n")
    if not data.startswith(b"YUV4MPEG2") or end < 0:
        raise ImageFormatError("not a Y4M stream")
    w = h = None
    depth = 8
    fps = (30, 1)
    extra = []
    for tok in data[:end].decode("ascii", "replace").split()[1:]:
        key, val = tok[0], tok[1:]
        try:
            if key == "W":
                w = int(val)
            elif key == "H":
                h = int(val)
            elif key == "F":
                num, den = (int(v) for v in val.split(":"))
                fps = (num, den)
            elif key == "C":
                if val not in _Y4M_COLOR:
                    raise ImageFormatError(f"unsupported Y4M colorspace C{val} (4:2:0 only)")
                depth = _Y4M_COLOR[val]
            else:
                extra.append(tok)
        except ValueError as e:
            raise ImageFormatError(f"malformed Y4M header field {tok!r}") from e
    if not w or not h or w <= 0 or h <= 0:
        raise ImageFormatError("Y4M header lacks dimensions")
    ch, cw = (h + 1) // 2, (w + 1) // 2
    dtype = np.dtype("<u2") if depth > 8 else np.dtype("u1")
    sizes = [(h, w), (ch, cw), (ch, cw)]
    frame_bytes = sum(a * b for a, b in sizes) * dtype.itemsize
    frames = []
    pos = end + 1
    while pos < len(data):
        nl = data.find(b"\n", pos)
        if nl < 0 or not data.startswith(b"FRAME", pos):
            raise ImageFormatError(f"bad FRAME marker in Y4M frame {len(frames)}")
        pos = nl + 1
        if len(data) - pos < frame_bytes:
            raise ImageFormatError(f"Y4M frame {len(frames)} truncated")
        planes = []
        for shape in sizes:
            n = shape[0] * shape[1]
            planes.append(np.frombuffer(data, dtype=dtype, count=n, offset=pos).reshape(shape).astype(np.int64))
            pos += n * dtype.itemsize
        frames.append(planes)
    if not frames:
        raise ImageFormatError("Y4M stream holds no frames")
    return Video(frames, depth, fps, extra)


def read_y4m(path) -> Video:
    return parse_y4m(Path(path).read_bytes())


def format_y4m(video: Video) -> bytes:
    color = "420p10" if video.bit_depth == 10 else "420jpeg"
    head = f"YUV4MPEG2 W{video.width} H{video.height} F{video.fps[0]}:{video.fps[1]} Ip A1:1 C{color}"
    out = [head.encode() + b"\n"]
    dtype = "<u2" if video.bit_depth > 8 else "u1"
    maxval = (1 << video.bit_depth) - 1
    for planes in video.frames:
        if len(planes) != 3:
            raise ValueError("Y4M output needs three planes per frame")
        out.append(b"FRAME\n")
        out.extend(np.clip(p, 0, maxval).astype(dtype).tobytes() for p in planes)
    return b"".join(out)


def write_y4m(path, video: Video) -> None:
    Path(path).write_bytes(format_y4m(video))


def read_image(path) -> Video:
    """Read a PGM or Y4M file (detected by content) as a video."""
    data = Path(path).read_bytes()
    if data.startswith(b"YUV4MPEG2"):
        return parse_y4m(data)
    if data.startswith(b"P5"):
        plane, depth = parse_pgm(data)
        return Video([[plane]], depth)
    raise ImageFormatError(f"{path}: neither a binary PGM nor a Y4M file")


def write_image(path, video: Video) -> None:
    """Write PGM for a single monochrome frame or when the path ends in .pgm."""
    path = Path(path)
    if path.suffix.lower() == ".pgm" or (len(video.frames) == 1 and len(video.frames[0]) == 1
                                         and path.suffix.lower() != ".y4m"):
        if len(video.frames) != 1:
            raise ValueError("PGM holds a single frame")
        write_pgm(path, video.frames[0][0], video.bit_depth)
    else:
        if len(video.frames[0]) == 1:
            raise ValueError("Y4M output needs chroma planes")
        write_y4m(path, video)
