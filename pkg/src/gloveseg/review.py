"""Embedded HTTP service backing the review UI.

Read-only over frames and labels; its single write path is the append-only
decisions file, and every accepted decision is fsynced before the 201 goes
out. Meant for LAN use: no auth.
"""

from __future__ import annotations

import io
import json
import re
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional
from urllib.parse import parse_qs, urlparse

import numpy as np
from PIL import Image

from .evalkit import ReviewDecision, append_decision, load_decisions
from .imaging import LEFT, RIGHT, SequenceManifest, load_color, load_label

OVERLAY_ALPHA = 0.45
LEFT_TINT = np.array([255.0, 64.0, 64.0])
RIGHT_TINT = np.array([64.0, 255.0, 64.0])

_FRAME_RE = re.compile(r"^/api/sequences/([^/]+)/frames/(\d+)/(overlay|raw|depth)\.png$")


def render_overlay(color_path: Path, label_path: Optional[Path]) -> bytes:
    """Color frame alpha-blended with its label mask (left red, right green)."""
    frame = load_color(color_path)
    rgb = frame.pixels.astype(np.float64)
    if label_path is not None and label_path.exists():
        label = load_label(label_path)
        for value, tint in ((LEFT, LEFT_TINT), (RIGHT, RIGHT_TINT)):
            sel = label == value
            rgb[sel] = (1.0 - OVERLAY_ALPHA) * rgb[sel] + OVERLAY_ALPHA * tint
    buf = io.BytesIO()
    Image.fromarray(np.clip(np.rint(rgb), 0, 255).astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


class ReviewService:
    def __init__(self, manifests: list[SequenceManifest], decisions_path, ui_dir=None):
        self.sequences: dict[str, SequenceManifest] = {}
        for m in manifests:
            if m.sequence_id in self.sequences:
                raise ValueError(f"duplicate sequence id {m.sequence_id!r}")
            self.sequences[m.sequence_id] = m
        self.decisions_path = Path(decisions_path)
        self.ui_dir = Path(ui_dir) if ui_dir else None
        self._append_lock = threading.Lock()
        # fail at startup, not on the first POST, if the path is unwritable
        with open(self.decisions_path, "a", encoding="utf-8"):
            pass

    # -- data access ------------------------------------------------------

    def sequence_summaries(self) -> list[dict]:
        out = []
        for sid, m in sorted(self.sequences.items()):
            labeled = all(
                f.label_path is not None and m.resolve(f.label_path).exists() for f in m.frames
            ) and bool(m.frames)
            out.append({"id": sid, "frame_count": len(m.frames), "labeled": labeled})
        return out

    def frame_entry(self, sequence_id: str, index: int):
        m = self.sequences.get(sequence_id)
        if m is None:
            return None, None
        for entry in m.frames:
            if entry.index == index:
                return m, entry
        return m, None

    def decisions_for(self, sequence_id: Optional[str]) -> list[ReviewDecision]:
        decisions = load_decisions(self.decisions_path)
        if sequence_id is None:
            return decisions
        return [d for d in decisions if d.sequence_id == sequence_id]

    def post_decision(self, doc: dict) -> ReviewDecision:
        sid = doc.get("sequence_id")
        manifest = self.sequences.get(sid)
        if manifest is None:
            raise KeyError(f"unknown sequence {sid!r}")
        decision = ReviewDecision(
            sequence_id=sid,
            start=int(doc["start"]),
            end=int(doc["end"]),
            verdict=doc["verdict"],
            reviewer=doc.get("reviewer", ""),
            timestamp=doc.get("timestamp") or datetime.now(timezone.utc).isoformat(),
        )
        max_index = manifest.frames[-1].index if manifest.frames else -1
        if decision.start < 0 or decision.end > max_index:
            raise ValueError(f"range [{decision.start}, {decision.end}] outside sequence (max index {max_index})")
        with self._append_lock:
            append_decision(self.decisions_path, decision)
        return decision


class _Handler(BaseHTTPRequestHandler):
    service: ReviewService  # injected by make_server

    def log_message(self, fmt, *args):  # quiet by default; tests capture stderr
        pass

    # -- helpers ----------------------------------------------------------

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, doc) -> None:
        self._send(status, json.dumps(doc).encode("utf-8"), "application/json")

    def _error(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    # -- routing ----------------------------------------------------------

    def do_GET(self):
        url = urlparse(self.path)
        if url.path == "/api/sequences":
            return self._send_json(200, self.service.sequence_summaries())
        m = _FRAME_RE.match(url.path)
        if m:
            return self._get_frame(m.group(1), int(m.group(2)), m.group(3))
        if url.path == "/api/decisions":
            query = parse_qs(url.query)
            sid = query.get("sequence", [None])[0]
            return self._send_json(200, [json.loads(d.to_json()) for d in self.service.decisions_for(sid)])
        return self._static(url.path)

    def _get_frame(self, sequence_id: str, index: int, kind: str):
        manifest, entry = self.service.frame_entry(sequence_id, index)
        if manifest is None:
            return self._error(404, f"unknown sequence {sequence_id!r}")
        if entry is None:
            return self._error(404, f"no frame {index} in {sequence_id!r}")
        try:
            if kind == "overlay":
                label = manifest.resolve(entry.label_path) if entry.label_path else None
                return self._send(200, render_overlay(manifest.resolve(entry.color_path), label), "image/png")
            path = manifest.resolve(entry.color_path if kind == "raw" else entry.depth_path)
            if not path.exists():
                return self._error(404, f"missing file {path.name}")
            return self._send(200, path.read_bytes(), "image/png")
        except Exception as exc:
            return self._error(500, f"{type(exc).__name__}: {exc}")

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/api/decisions":
            return self._error(404, "unknown endpoint")
        try:
            length = int(self.headers.get("Content-Length", "0"))
            doc = json.loads(self.rfile.read(length).decode("utf-8"))
            decision = self.service.post_decision(doc)
        except KeyError as exc:
            return self._error(404, str(exc))
        except (ValueError, json.JSONDecodeError) as exc:
            return self._error(400, str(exc))
        return self._send_json(201, json.loads(decision.to_json()))

    def _static(self, path: str):
        ui_dir = self.service.ui_dir
        if ui_dir is None:
            return self._error(404, "no UI assets configured (start with --ui-dir)")
        rel = path.lstrip("/") or "index.html"
        target = (ui_dir / rel).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            return self._error(404, f"no such asset {rel!r}")
        types = {".html": "text/html", ".js": "application/javascript", ".css": "text/css",
                 ".map": "application/json", ".png": "image/png", ".svg": "image/svg+xml"}
        return self._send(200, target.read_bytes(), types.get(target.suffix, "application/octet-stream"))


def serve_review(
    manifests: list[SequenceManifest],
    decisions_path,
    host: str = "127.0.0.1",
    port: int = 8731,
    ui_dir=None,
) -> ThreadingHTTPServer:
    """Build the review server (caller runs serve_forever / shutdown)."""
    service = ReviewService(manifests, decisions_path, ui_dir=ui_dir)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.service = service
    return server
