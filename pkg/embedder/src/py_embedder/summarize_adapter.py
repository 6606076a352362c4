"""Stand-in summarizer speaking the fact-summarizer protocol.

POST /summarize {"instruction": ..., "text": ...} -> {"summary": ...} where
the summary is simply the first N whitespace words of the text. It exists so
pipelines can be wired and tested end to end without a language model; point
the engine at a real service for quality.

Run: python3 -m py_embedder.summarize_adapter --port 8201 [--words 50]
"""

import argparse
import json
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def lead_summary(text: str, words: int) -> str:
    return " ".join(text.split()[:words])


def _make_handler(words: int):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):
            pass

        def _reply(self, status: int, payload: dict) -> None:
            body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            if self.path != "/summarize":
                self._reply(404, {"error": "not found"})
                return
            length = int(self.headers.get("Content-Length", "0"))
            try:
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                self._reply(400, {"error": "body is not JSON"})
                return
            text = payload.get("text") if isinstance(payload, dict) else None
            if not isinstance(text, str):
                self._reply(400, {"error": "missing string field 'text'"})
                return
            self._reply(200, {"summary": lead_summary(text, words)})

        def do_GET(self):
            self._reply(404, {"error": "not found"})

    return Handler


def serve(host: str = "127.0.0.1", port: int = 0, words: int = 50) -> ThreadingHTTPServer:
    """Bind and return the server (caller runs serve_forever)."""
    return ThreadingHTTPServer((host, port), _make_handler(words))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8201)
    parser.add_argument("--words", type=int, default=50, help="summary length in words")
    args = parser.parse_args(argv)
    server = serve(args.host, args.port, args.words)
    print(f"summarize adapter on http://{args.host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
