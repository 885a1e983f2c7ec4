"""Evidence payload references (file, http(s) and data URIs)."""
from __future__ import annotations

import base64
import mimetypes
import urllib.parse
from pathlib import Path


class PayloadError(ValueError):
    pass


def _file_path(ref: str) -> Path:
    parsed = urllib.parse.urlparse(ref)
    return Path(urllib.parse.unquote(parsed.path))


def _split_data_uri(ref: str) -> tuple[str, bool, str]:
    header, sep, body = ref[len("data:"):].partition(",")
    if not sep:
        raise PayloadError(f"malformed data URI: {ref[:40]!r}")
    params = header.split(";")
    media_type = params[0] or "text/plain"
    return media_type, "base64" in params[1:], body


def check_payload_ref(ref: str) -> None:
    """Raise PayloadError unless ``ref`` is a usable evidence reference.

    Remote URLs are accepted without fetching them.
    """
    if not ref:
        raise PayloadError("empty payload reference")
    scheme = urllib.parse.urlparse(ref).scheme
    if scheme == "file":
        path = _file_path(ref)
        if not path.is_file():
            raise PayloadError(f"payload not found: {path}")
    elif scheme == "data":
        media_type, is_b64, body = _split_data_uri(ref)
        if is_b64:
            try:
                base64.b64decode(body, validate=True)
            except ValueError as exc:
                raise PayloadError(f"bad base64 in data URI: {exc}") from None
    elif scheme not in ("http", "https"):
        raise PayloadError(f"unsupported payload scheme {scheme!r} in {ref!r}")


def is_text_payload(ref: str) -> bool:
    return ref.startswith("data:") and _split_data_uri(ref)[0].startswith("text/")


def text_of(ref: str) -> str:
    _, is_b64, body = _split_data_uri(ref)
    if is_b64:
        return base64.b64decode(body).decode("utf-8")
    return urllib.parse.unquote(body)


def to_content_part(ref: str) -> dict:
    """Chat-completions content part for one evidence reference."""
    check_payload_ref(ref)
    scheme = urllib.parse.urlparse(ref).scheme
    if scheme == "file":
        path = _file_path(ref)
        mime = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        encoded = base64.b64encode(path.read_bytes()).decode("ascii")
        url = f"data:{mime};base64,{encoded}"
    elif is_text_payload(ref):
        return {"type": "text", "text": text_of(ref)}
    else:
        url = ref
    return {"type": "image_url", "image_url": {"url": url}}


def text_data_uri(text: str) -> str:
    return "data:text/plain;base64," + base64.b64encode(text.encode("utf-8")).decode("ascii")
