"""Shared framing helpers for the binary dataset and model containers."""


class FileFormatError(ValueError):
    """Base error for malformed binary containers."""


class BadMagicError(FileFormatError):
    """The file does not start with the expected magic bytes."""


class TruncatedError(FileFormatError):
    """The file ended before the declared payload was complete."""


class DimensionError(FileFormatError):
    """Header dimensions are inconsistent with the payload or with each other."""


def read_exact(fh, nbytes, what):
    """Read exactly `nbytes` from `fh` or raise TruncatedError naming `what`."""
    buf = fh.read(nbytes)
    if len(buf) != nbytes:
        raise TruncatedError(
            f"truncated file: expected {nbytes} bytes for {what}, got {len(buf)}"
        )
    return buf


def expect_magic(fh, magic):
    buf = fh.read(len(magic))
    if buf != magic:
        raise BadMagicError(f"bad magic bytes: expected {magic!r}, got {buf!r}")
