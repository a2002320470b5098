"""Binary array container: one-line JSON header + little-endian float64 payload.

Shared by trajectory ensembles, sequence datasets and network checkpoints.
Round trips are bit-exact; all writes are atomic (temp file + rename).
"""

import json
import os
import tempfile

import numpy as np

PAYLOAD_DTYPE = np.dtype("<f8")


class ArrayFileError(Exception):
    """Base class for container format errors."""


class HeaderError(ArrayFileError):
    """Missing, unparsable or inconsistent header."""


class PayloadSizeError(ArrayFileError):
    """Payload length does not match what the header promises."""


class VersionError(ArrayFileError):
    """File was written by an incompatible format version."""


def write_atomic(path: str, data: bytes) -> None:
    """Write bytes so that a partial file is never visible under `path`."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)   # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode(header: dict, payload: np.ndarray) -> bytes:
    """Serialize header + payload. Header keys are sorted for byte determinism."""
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = np.ascontiguousarray(payload, dtype=PAYLOAD_DTYPE).tobytes()
    return head + b"\n" + body


def write_array_file(path: str, header: dict, payload: np.ndarray) -> None:
    write_atomic(path, encode(header, payload))


def read_array_file(path: str) -> tuple[dict, np.ndarray]:
    """Read (header, flat float64 payload). Raises HeaderError on a bad header."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise HeaderError(f"{path}: no header line found")
    try:
        header = json.loads(raw[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{path}: corrupt header: {exc}") from None
    if not isinstance(header, dict):
        raise HeaderError(f"{path}: header is not an object")
    body = raw[newline + 1:]
    if len(body) % PAYLOAD_DTYPE.itemsize != 0:
        raise PayloadSizeError(f"{path}: payload is not a whole number of float64s")
    return header, np.frombuffer(body, dtype=PAYLOAD_DTYPE)


def expect_payload(header: dict, payload: np.ndarray, n_expected: int, path: str) -> None:
    """Check the payload element count promised by the header."""
    if payload.size != n_expected:
        raise PayloadSizeError(
            f"{path}: expected {n_expected} float64 values, found {payload.size}"
        )
