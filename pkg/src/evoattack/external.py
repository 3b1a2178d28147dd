"""External-process oracle speaking a line-delimited JSON protocol over stdin/stdout.

Handshake::

    engine -> {"hello": {"h": H, "w": W, "c": C}}
    oracle -> {"ready": {"classes": K}}

Then one request/response pair per query::

    engine -> {"id": 7, "pixels": [H*W*C reals in [0, 1]]}
    oracle -> {"id": 7, "probs": [K reals]}

and ``{"bye": true}`` before the engine closes the stream.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import tempfile
import threading

import numpy as np

from .errors import (
    HandshakeError,
    MalformedResponseError,
    OracleExitedError,
    OracleSpawnError,
    ProtocolError,
    ResponseIdError,
)
from .oracle import ClassifierOracle
from .tensors import ImageTensor, check_probabilities

_SEP = (",", ":")


def _dumps(obj):
    return json.dumps(obj, separators=_SEP, allow_nan=False)


def _loads_object(line, what):
    try:
        msg = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ValueError(f"{what} is not valid JSON: {exc.msg if hasattr(exc, 'msg') else exc}") from None
    if not isinstance(msg, dict):
        raise ValueError(f"{what} must be a JSON object")
    return msg


def _check_id(value):
    if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value < 2**64:
        raise ValueError(f"id must be an unsigned 64-bit integer, got {value!r}")
    return value


def _real_list(values, what):
    if not isinstance(values, list) or any(
        isinstance(v, bool) or not isinstance(v, (int, float)) for v in values
    ):
        raise ValueError(f"{what} must be a list of numbers")
    return np.array(values, dtype=np.float64)


def encode_hello(shape):
    h, w, c = (int(v) for v in shape)
    return _dumps({"hello": {"h": h, "w": w, "c": c}})


def decode_hello(line):
    msg = _loads_object(line, "hello")
    body = msg.get("hello")
    if set(msg) != {"hello"} or not isinstance(body, dict) or set(body) != {"h", "w", "c"}:
        raise ValueError(f"expected {{'hello': {{'h','w','c'}}}}, got {line.strip()!r}")
    return (int(body["h"]), int(body["w"]), int(body["c"]))


def encode_ready(num_classes):
    return _dumps({"ready": {"classes": int(num_classes)}})


def decode_ready(line):
    msg = _loads_object(line, "ready")
    body = msg.get("ready")
    if set(msg) != {"ready"} or not isinstance(body, dict) or set(body) != {"classes"}:
        raise ValueError(f"expected {{'ready': {{'classes': K}}}}, got {line.strip()!r}")
    classes = body["classes"]
    if isinstance(classes, bool) or not isinstance(classes, int) or classes < 1:
        raise ValueError(f"class count must be a positive integer, got {classes!r}")
    return classes


def encode_request(request_id, pixels):
    return _dumps({"id": _check_id(request_id), "pixels": np.asarray(pixels, dtype=np.float64).reshape(-1).tolist()})


def decode_request(line):
    msg = _loads_object(line, "request")
    if set(msg) != {"id", "pixels"}:
        raise ValueError(f"request must have exactly 'id' and 'pixels', got {sorted(msg)}")
    return _check_id(msg["id"]), _real_list(msg["pixels"], "pixels")


def encode_response(request_id, probs):
    return _dumps({"id": _check_id(request_id), "probs": np.asarray(probs, dtype=np.float64).reshape(-1).tolist()})


def decode_response(line):
    msg = _loads_object(line, "response")
    if set(msg) != {"id", "probs"}:
        raise ValueError(f"response must have exactly 'id' and 'probs', got {sorted(msg)}")
    return _check_id(msg["id"]), _real_list(msg["probs"], "probs")


def encode_bye():
    return _dumps({"bye": True})


def is_bye(line):
    try:
        return json.loads(line) == {"bye": True}
    except json.JSONDecodeError:
        return False


class ExternalOracle(ClassifierOracle):
    """Oracle backed by a child process; one outstanding request at a time.

    ``timeout`` (seconds, ``None`` for no limit) bounds every wait for a
    line from the child.
    """

    def __init__(self, command, input_shape, num_classes=None, timeout=None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.input_shape = tuple(int(v) for v in input_shape)
        self.timeout = timeout
        self._declared = num_classes
        self._lock = threading.Lock()
        self._next_id = 1
        self._lines = queue.Queue()
        self._stderr = tempfile.TemporaryFile(mode="w+b")
        try:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=self._stderr,
                text=True,
                bufsize=1,
            )
        except (OSError, ValueError) as exc:
            self._stderr.close()
            raise OracleSpawnError(f"cannot start {self.command!r}: {exc}") from exc
        threading.Thread(target=self._pump, daemon=True).start()
        self.num_classes = self._handshake()

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def _stderr_tail(self):
        try:
            self._stderr.seek(0)
            tail = self._stderr.read()[-400:].decode("utf-8", "replace").strip()
        except (OSError, ValueError):
            return ""
        return f"; stderr: {tail}" if tail else ""

    def _send(self, line, stage):
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise OracleExitedError(
                f"oracle process closed its input ({exc}){self._stderr_tail()}",
                stage=stage,
                returncode=self._proc.poll(),
            ) from exc

    def _receive(self, stage):
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ProtocolError(f"no reply within {self.timeout}s", stage) from None
        if line is None:
            code = self._proc.wait()
            raise OracleExitedError(
                f"oracle process exited (code {code}) before replying{self._stderr_tail()}",
                stage=stage,
                returncode=code,
            )
        return line

    def _handshake(self):
        try:
            self._send(encode_hello(self.input_shape), "handshake")
            line = self._receive("handshake")
            try:
                classes = decode_ready(line)
            except ValueError as exc:
                raise HandshakeError(str(exc)) from None
            if self._declared is not None and classes != int(self._declared):
                raise HandshakeError(f"oracle reports {classes} classes, expected {self._declared}")
        except ProtocolError:
            self._kill()
            raise
        return classes

    def classify(self, image):
        data = image.data if isinstance(image, ImageTensor) else np.asarray(image, dtype=np.float64)
        if tuple(data.shape) != self.input_shape:
            raise ProtocolError(f"image shape {tuple(data.shape)} does not match {self.input_shape}", "request")
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            self._send(encode_request(request_id, data), "request")
            line = self._receive("response")
        try:
            got_id, probs = decode_response(line)
        except ValueError as exc:
            raise MalformedResponseError(str(exc)) from None
        if got_id != request_id:
            raise ResponseIdError(request_id, got_id)
        try:
            return check_probabilities(probs, self.num_classes)
        except ValueError as exc:
            raise MalformedResponseError(str(exc)) from None

    def clone(self):
        return ExternalOracle(self.command, self.input_shape, self.num_classes, self.timeout)

    def _kill(self):
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()
        for stream in (self._proc.stdin, self._stderr):
            try:
                stream.close()
            except (OSError, ValueError):
                pass

    def close(self):
        if self._proc.poll() is None:
            try:
                self._send(encode_bye(), "shutdown")
                self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except (ProtocolError, subprocess.TimeoutExpired):
                pass
        self._kill()


def spawn_external_oracle(command, input_shape, num_classes=None, timeout=None):
    return ExternalOracle(command, input_shape, num_classes, timeout)
