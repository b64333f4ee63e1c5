"""Bundled mock imagery catalog for tests and offline runs.

Serves the minimal search contract used by :func:`povrate.imagery.query_catalog`
(POST /search with a JSON body of bbox / datetime / collections) and the scene
assets referenced by the returned items (GET under /assets/). Run standalone
with ``python -m povrate.mockcatalog <items.json> <asset_dir>``.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .imagery import parse_datetime


def _bbox_intersects(a, b) -> bool:
    return not (a[2] < b[0] or b[2] < a[0] or a[3] < b[1] or b[3] < a[1])


class MockCatalog:
    """In-process catalog server.

    ``items`` is a list of dicts with keys id, cloud_cover, acquired,
    asset_ref and optionally bbox ([w, s, e, n]) and collection. ``asset_dir``
    is served under /assets/. Set ``fail_status`` to force every /search
    response to that HTTP status.
    """

    def __init__(self, items, asset_dir=None, fail_status: int | None = None, port: int = 0):
        self.items = list(items)
        self.asset_dir = Path(asset_dir) if asset_dir else None
        self.fail_status = fail_status
        self.port = port
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    @property
    def endpoint(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://127.0.0.1:{port}"

    def asset_url(self, name: str) -> str:
        return f"{self.endpoint}/assets/{name}"

    def search(self, bbox, datetime_range: str, collections) -> list[dict]:
        start_s, end_s = datetime_range.split("/")
        start, end = parse_datetime(start_s), parse_datetime(end_s)
        hits = []
        for item in self.items:
            acquired = parse_datetime(item["acquired"])
            if not start <= acquired <= end:
                continue
            if "bbox" in item and bbox is not None and not _bbox_intersects(item["bbox"], bbox):
                continue
            if "collection" in item and collections and item["collection"] not in collections:
                continue
            hits.append(
                {
                    "id": item["id"],
                    "cloud_cover": item["cloud_cover"],
                    "acquired": item["acquired"],
                    "asset_ref": item["asset_ref"],
                }
            )
        return hits

    def __enter__(self) -> "MockCatalog":
        catalog = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, status: int, body: bytes, content_type="application/json"):
                self.send_response(status)
                self.send_header("Content-Type", content_type)
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_POST(self):
                if self.path != "/search":
                    self._send(404, b"{}")
                    return
                if catalog.fail_status is not None:
                    self._send(catalog.fail_status, b"simulated failure")
                    return
                length = int(self.headers.get("Content-Length", "0"))
                try:
                    query = json.loads(self.rfile.read(length) or b"{}")
                    hits = catalog.search(
                        query.get("bbox"),
                        query.get("datetime", "0001-01-01/9999-01-01"),
                        query.get("collections", []),
                    )
                except Exception as err:  # malformed query -> client error
                    self._send(400, json.dumps({"error": str(err)}).encode())
                    return
                self._send(200, json.dumps(hits).encode())

            def do_GET(self):
                if not self.path.startswith("/assets/") or catalog.asset_dir is None:
                    self._send(404, b"{}")
                    return
                name = self.path[len("/assets/"):]
                target = (catalog.asset_dir / name).resolve()
                if not str(target).startswith(str(catalog.asset_dir.resolve())) or not target.is_file():
                    self._send(404, b"{}")
                    return
                self._send(200, target.read_bytes(), content_type="application/octet-stream")

        self._server = ThreadingHTTPServer(("127.0.0.1", self.port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="Serve a mock imagery catalog.")
    parser.add_argument("items_json", help="JSON file with the item list")
    parser.add_argument("asset_dir", help="directory of scene assets to serve")
    parser.add_argument("--port", type=int, default=8611)
    args = parser.parse_args(argv)
    with open(args.items_json, "r", encoding="utf-8") as fh:
        items = json.load(fh)
    catalog = MockCatalog(items, asset_dir=args.asset_dir, port=args.port)
    with catalog:
        server = catalog._server
        assert server is not None
        print(f"mock catalog at {catalog.endpoint} (ctrl-c to stop)")
        try:
            threading.Event().wait()
        except KeyboardInterrupt:
            pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
