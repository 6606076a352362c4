"""Shared fixtures: a tiny local checkpoint and a live service over loopback.

The checkpoint is a randomly initialized two-layer encoder written to disk by
the session fixture, so no network or real model download is ever involved.
The vocab is letters plus their continuation pieces, which makes every ASCII
word tokenize to one piece per character; handy, because token counts then
scale with text length and truncation paths get exercised for real.
"""

import threading
import time
from types import SimpleNamespace

import pytest
import torch
import uvicorn
from transformers import BertConfig, BertModel, BertTokenizer

from py_embedder.app import create_app
from py_embedder.config import ServiceConfig

LETTERS = "abcdefghijklmnopqrstuvwxyz"
VOCAB = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
VOCAB += list(LETTERS) + ["##" + letter for letter in LETTERS]

HIDDEN_SIZE = 32
SERVICE_MAX_TOKENS = 64


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("checkpoint")
    vocab_file = root / "vocab.txt"
    vocab_file.write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    tokenizer = BertTokenizer(str(vocab_file), do_lower_case=True)
    tokenizer.save_pretrained(root)
    torch.manual_seed(1234)
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=HIDDEN_SIZE,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=96,
    )
    BertModel(config).save_pretrained(root)
    return root


class LiveServer:
    """uvicorn in a daemon thread on an ephemeral port."""

    def __init__(self, app):
        self._server = uvicorn.Server(
            uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        )
        self._thread = threading.Thread(target=self._server.run, daemon=True)

    def start(self) -> str:
        self._thread.start()
        deadline = time.monotonic() + 30
        while not self._server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("service did not come up within 30s")
            time.sleep(0.02)
        port = self._server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def stop(self) -> None:
        self._server.should_exit = True
        self._thread.join(timeout=10)


@pytest.fixture(scope="session")
def service_config(checkpoint_dir):
    return ServiceConfig(model=str(checkpoint_dir), max_tokens=SERVICE_MAX_TOKENS)


@pytest.fixture(scope="session")
def service(service_config):
    server = LiveServer(create_app(service_config))
    url = server.start()
    yield SimpleNamespace(url=url, config=service_config)
    server.stop()


@pytest.fixture(scope="session")
def broken_service(tmp_path_factory):
    config = ServiceConfig(model=str(tmp_path_factory.mktemp("empty") / "missing"))
    server = LiveServer(create_app(config))
    url = server.start()
    yield SimpleNamespace(url=url, config=config)
    server.stop()
