"""Shared fixtures: sample cases, on-disk corpus layouts, a stub HTTP service.

Also collects the acceptance-criterion results (tests marked with
``criterion``) and prints one PASS/FAIL line per criterion at the end of the
run.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from promptcase.corpus import CaseDocument

_ACCEPTANCE: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(name): acceptance criterion this test implements"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "setup" and not report.passed:
        _ACCEPTANCE[name] = "FAIL"
    elif report.when == "call":
        # A criterion split over several tests fails if any part fails.
        verdict = "PASS" if report.passed else "FAIL"
        if _ACCEPTANCE.get(name) != "FAIL":
            _ACCEPTANCE[name] = verdict


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _ACCEPTANCE.items():
        terminalreporter.write_line(f"{verdict}  {name}")


# ---------------------------------------------------------------- documents


@pytest.fixture
def en_doc():
    text = (
        "The appellant challenged the assessment. FRAGMENT_SUPPRESSED "
        "The court reviewed the record in detail. The appeal was allowed in part."
    )
    return CaseDocument(id="en-1", jurisdiction="common_law", language="en", raw_text=text)


@pytest.fixture
def zh_doc():
    text = (
        "某某人民法院刑事判决书。经审理查明：被告人张某以非法占有为目的实施盗窃，"
        "数额较大，构成盗窃罪。本院认为，事实清楚，证据确实充分。"
    )
    return CaseDocument(id="zh-1", jurisdiction="civil_law", language="zh", raw_text=text)


# ------------------------------------------------------------ corpus layouts


COLIEE_TEXTS = {
    "001": (
        "The appellant sought judicial review of the tariff decision. "
        "FRAGMENT_SUPPRESSED The board had denied the claim without reasons. "
        "It held that procedural fairness applied."
    ),
    "002": (
        "An application for an interlocutory stay was brought. FRAGMENT_SUPPRESSED "
        "The judge weighed the balance of convenience. The motion was dismissed with costs."
    ),
    "003": (
        "Les motifs du jugement sont les suivants et la cour est pour le demandeur "
        "dans cette affaire.\n\n"
        "The respondent argued the claim was moot. FRAGMENT_SUPPRESSED "
        "The appeal raised a novel question of standing."
    ),
    "004": (
        "The plaintiff alleged breach of fiduciary duty. The defendant denied it. "
        "FRAGMENT_SUPPRESSED Damages were assessed at trial and upheld."
    ),
    "005": (
        "A certification motion was heard. The class definition was contested. "
        "FRAGMENT_SUPPRESSED The court certified the narrower class."
    ),
}


def write_coliee_dir(root: Path, queries=("001", "002")) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for case_id, text in COLIEE_TEXTS.items():
        (root / f"{case_id}.txt").write_text(text, encoding="utf-8")
    manifest = "# query cases\n" + "\n".join(queries) + "\n"
    (root / "queries.manifest").write_text(manifest, encoding="utf-8")
    return root


@pytest.fixture
def coliee_dir(tmp_path):
    return write_coliee_dir(tmp_path / "coliee")


LECARD_CHARGES = ("盗窃罪", "抢劫罪", "诈骗罪", "合同诈骗罪", "故意伤害罪", "交通肇事罪", "受贿罪", "职务侵占罪")


def write_lecard_dirs(base: Path, n_queries=3, pool_size=8, relevant_per_query=2):
    """LeCaRD-style layout: queries JSONL, per-query candidate dirs, labels JSON.

    Texts are built so lexical and mock-embedding overlap tracks the shared
    charge names, giving non-trivial rankings.
    """
    base.mkdir(parents=True, exist_ok=True)
    candidates = base / "candidates"
    query_lines = []
    labels: dict[str, list[str]] = {}
    for qi in range(n_queries):
        qid = f"q{qi + 1}"
        charge = LECARD_CHARGES[qi % len(LECARD_CHARGES)]
        query_lines.append(
            json.dumps(
                {
                    "id": qid,
                    "text": (
                        f"某某人民法院刑事判决书。经审理查明：被告人李某因{charge}被提起公诉，"
                        "事实如前所述。本院认为，应依法判处。"
                    ),
                },
                ensure_ascii=False,
            )
        )
        qdir = candidates / qid
        qdir.mkdir(parents=True, exist_ok=True)
        rel: list[str] = []
        for ci in range(pool_size):
            cid = f"c{qi + 1}{ci + 1:02d}"
            charge_c = LECARD_CHARGES[(qi + ci) % len(LECARD_CHARGES)]
            filler = "情节严重，赃款若干。" if ci % 2 else "情节较轻，已经退赔。"
            (qdir / f"{cid}.txt").write_text(
                f"某某人民法院刑事判决书。经审理查明：被告人王某犯{charge_c}，{filler}上述事实，有证据在案佐证。",
                encoding="utf-8",
            )
            if ci < relevant_per_query:
                rel.append(cid)
        labels[qid] = rel
    queries_file = base / "queries.jsonl"
    queries_file.write_text("\n".join(query_lines) + "\n", encoding="utf-8")
    labels_file = base / "labels.json"
    labels_file.write_text(json.dumps(labels, ensure_ascii=False, indent=2), encoding="utf-8")
    return queries_file, candidates, labels_file


@pytest.fixture
def lecard_dirs(tmp_path):
    return write_lecard_dirs(tmp_path / "lecard")


def write_run_config(path: Path, dataset: dict, out: Path, **overrides) -> Path:
    config = {"dataset": dataset, "out": str(out), "seed": 7, "backend": {"spec": "mock", "dim": 16}}
    config.update(overrides)
    path.write_text(json.dumps(config, ensure_ascii=False, indent=2), encoding="utf-8")
    return path


@pytest.fixture
def lecard_config(tmp_path, lecard_dirs):
    queries, candidates, labels = lecard_dirs
    return write_run_config(
        tmp_path / "config.json",
        {
            "kind": "lecard",
            "queries": str(queries),
            "candidates": str(candidates),
            "labels": str(labels),
        },
        tmp_path / "out",
    )


# ------------------------------------------------------------- stub service


class StubState:
    """Mutable knobs for the stub embedding/summarizer service."""

    def __init__(self):
        self.url = ""
        self.dim = 8
        self.max_tokens = 128
        self.fail_embed = 0  # serve this many 500s before succeeding
        self.embed_mode = "ok"  # ok | bad_count | not_json | reject
        self.summary_mode = "ok"  # ok | fail | empty
        self.requests: list[tuple[str, str]] = []


def stub_vector(segments, dim):
    """Deterministic, input-sensitive vector so rankings are reproducible."""
    joined = "\x1f".join(segments)
    seed = sum((i + 1) * b for i, b in enumerate(joined.encode("utf-8"))) or 1
    return [((seed * (j + 3)) % 97) / 97.0 for j in range(dim)]


class _StubHandler(BaseHTTPRequestHandler):
    state: StubState

    def log_message(self, *args):
        pass

    def _send(self, code, payload=None, raw=None):
        body = raw if raw is not None else json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        state = self.state
        state.requests.append(("GET", self.path))
        if self.path == "/health":
            self._send(
                200,
                {
                    "name": "stub",
                    "model_version": "stub-encoder-1",
                    "dim": state.dim,
                    "max_tokens": state.max_tokens,
                    "pooling": "cls",
                },
            )
        else:
            self._send(404, {"error": "no such route"})

    def do_POST(self):
        state = self.state
        state.requests.append(("POST", self.path))
        length = int(self.headers.get("Content-Length", 0))
        try:
            body = json.loads(self.rfile.read(length) or b"{}")
        except ValueError:
            self._send(400, {"error": "bad json"})
            return
        if self.path == "/embed":
            if state.fail_embed > 0:
                state.fail_embed -= 1
                self._send(500, {"error": "transient failure"})
                return
            if state.embed_mode == "reject":
                self._send(400, {"error": "rejected"})
                return
            if state.embed_mode == "not_json":
                self._send(200, raw=b"not json at all")
                return
            vectors = [stub_vector(inp["segments"], state.dim) for inp in body.get("inputs", [])]
            if state.embed_mode == "bad_count" and vectors:
                vectors = vectors[:-1]
            self._send(200, {"dim": state.dim, "vectors": vectors, "model_version": "stub-encoder-1"})
        elif self.path == "/summarize":
            if state.summary_mode == "fail":
                self._send(500, {"error": "broken"})
            elif state.summary_mode == "empty":
                self._send(200, {"summary": "   "})
            else:
                summary = " ".join(body.get("text", "").split()[:8])
                self._send(200, {"summary": summary + " (summary)"})
        else:
            self._send(404, {"error": "no such route"})


@pytest.fixture
def stub_service():
    state = StubState()
    handler = type("BoundStubHandler", (_StubHandler,), {"state": state})
    server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state.url = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        yield state
    finally:
        server.shutdown()
        thread.join(timeout=5)
