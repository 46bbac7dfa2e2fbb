"""Black-box scorer handles and the line-delimited JSON scoring protocol.

Request (one JSON object per line on the child's stdin)::

    {"id": 3, "video": "/path/clip.vten",
     "mask": {"t0": 0, "t1": 16, "r0": 0, "r1": 16, "c0": 16, "c1": 32, "fill": 0.0}}

``mask`` may be ``null`` (score the unmodified video).  Ranges are
half-open.  Response (one line on stdout)::

    {"id": 3, "confidence": 0.71}

A response with an unknown id, a missing or out-of-range confidence, or an
``"error"`` member is a protocol violation.
"""

from __future__ import annotations

import json
import os
import queue
import subprocess
import sys
import tempfile
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidInputError, ScorerError
from .vten import as_video, read_vten, write_vten


@dataclass(frozen=True)
class Mask:
    t0: int
    t1: int
    r0: int
    r1: int
    c0: int
    c1: int
    fill: float = 0.0

    def to_dict(self) -> dict:
        return {"t0": self.t0, "t1": self.t1, "r0": self.r0, "r1": self.r1,
                "c0": self.c0, "c1": self.c1, "fill": float(self.fill)}

    @classmethod
    def from_dict(cls, d) -> "Mask":
        return cls(int(d["t0"]), int(d["t1"]), int(d["r0"]), int(d["r1"]),
                   int(d["c0"]), int(d["c1"]), float(d.get("fill", 0.0)))


def apply_mask(video: np.ndarray, mask: Mask | None) -> np.ndarray:
    if mask is None:
        return video
    T, H, W = video.shape
    if not (0 <= mask.t0 < mask.t1 <= T and 0 <= mask.r0 < mask.r1 <= H and 0 <= mask.c0 < mask.c1 <= W):
        raise InvalidInputError(f"mask {mask} outside video of shape {video.shape}")
    out = video.copy()
    out[mask.t0:mask.t1, mask.r0:mask.r1, mask.c0:mask.c1] = mask.fill
    return out


class CallableScorer:
    """In-process scorer wrapping ``fn(video) -> confidence``."""

    def __init__(self, fn: Callable[[np.ndarray], float]):
        self.fn = fn

    def score(self, video: np.ndarray, masks: Sequence[Mask | None], video_path=None) -> list[float]:
        return [float(self.fn(apply_mask(video, m))) for m in masks]

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LinearScorer(CallableScorer):
    """``offset + sum(weights * video)``; the reference synthetic scorer."""

    def __init__(self, weights, offset: float = 0.0):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.offset = float(offset)
        super().__init__(self._linear)

    def _linear(self, video):
        if video.shape != self.weights.shape:
            raise InvalidInputError(f"weights {self.weights.shape} do not match video {video.shape}")
        return self.offset + float(np.sum(self.weights * video))


class SubprocessScorer:
    """Client side of the protocol against a child process.

    Requests are pipelined in batches; responses are matched by id, so the
    child may answer in any order.
    """

    def __init__(self, command: Sequence[str], timeout: float = 60.0, batch: int = 64):
        self.command = list(command)
        self.timeout = timeout
        self.batch = batch
        self._next_id = 0
        try:
            self.proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         text=True, bufsize=1)
        except OSError as exc:
            raise ScorerError(f"cannot start scorer {self.command!r}: {exc}") from None
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for line in self.proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _read(self, pending_id: int) -> dict:
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ScorerError("timed out waiting for response", pending_id) from None
        if line is None:
            raise ScorerError("scorer exited before responding", pending_id)
        try:
            msg = json.loads(line)
        except json.JSONDecodeError:
            raise ScorerError(f"malformed response line {line.strip()!r}", pending_id) from None
        if not isinstance(msg, dict):
            raise ScorerError("response is not a JSON object", pending_id)
        return msg

    def score(self, video: np.ndarray, masks: Sequence[Mask | None], video_path=None) -> list[float]:
        tmp = None
        if video_path is None:
            fd, tmp = tempfile.mkstemp(suffix=".vten")
            os.close(fd)
            write_vten(tmp, video)
            video_path = tmp
        try:
            results: list[float] = [0.0] * len(masks)
            for lo in range(0, len(masks), self.batch):
                chunk = masks[lo:lo + self.batch]
                ids = {}
                for k, m in enumerate(chunk):
                    rid = self._next_id
                    self._next_id += 1
                    ids[rid] = lo + k
                    req = {"id": rid, "video": str(video_path), "mask": None if m is None else m.to_dict()}
                    try:
                        self.proc.stdin.write(json.dumps(req) + "\n")
                    except (BrokenPipeError, OSError):
                        raise ScorerError("scorer closed its input", rid) from None
                self.proc.stdin.flush()
                while ids:
                    msg = self._read(min(ids))
                    rid = msg.get("id")
                    if rid not in ids:
                        raise ScorerError(f"response for unknown id {rid!r}", min(ids))
                    if "error" in msg:
                        raise ScorerError(f"scorer reported: {msg['error']}", rid)
                    conf = msg.get("confidence")
                    if not isinstance(conf, (int, float)) or isinstance(conf, bool) or not (0.0 <= conf <= 1.0):
                        raise ScorerError(f"confidence {conf!r} outside [0, 1]", rid)
                    results[ids.pop(rid)] = float(conf)
            return results
        finally:
            if tmp is not None:
                os.unlink(tmp)

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve_linear(weights_path, offset: float = 0.5, stdin=None, stdout=None) -> int:
    """Reference scorer loop: answer requests with ``offset + sum(w * v)``."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    weights = read_vten(weights_path).astype(np.float64)
    cache: dict[str, np.ndarray] = {}
    for line in stdin:
        if not line.strip():
            continue
        rid = None
        try:
            req = json.loads(line)
            rid = req["id"]
            path = req["video"]
            if path not in cache:
                cache[path] = as_video(read_vten(path))
            video = apply_mask(cache[path], None if req.get("mask") is None else Mask.from_dict(req["mask"]))
            if video.shape != weights.shape:
                raise InvalidInputError(f"video {video.shape} vs weights {weights.shape}")
            resp = {"id": rid, "confidence": offset + float(np.sum(weights * video))}
        except Exception as exc:  # reported to the client, which treats it as a violation
            resp = {"id": rid, "error": str(exc)}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()
    return 0
