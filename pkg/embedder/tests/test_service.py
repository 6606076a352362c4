"""Wire-protocol tests over a live loopback server, including the retrieval
engine's backend contract suite running unmodified against the service."""

import math

import pytest
import requests

from conftest import HIDDEN_SIZE, SERVICE_MAX_TOKENS
from promptcase.backend import RemoteBackend, check_backend_contract


def post_embed(service, payload, **kwargs):
    return requests.post(service.url + "/embed", timeout=30, **({"json": payload} | kwargs))


def test_health_payload(service):
    response = requests.get(service.url + "/health", timeout=30)
    assert response.status_code == 200
    payload = response.json()
    assert set(payload) == {"name", "model_version", "dim", "max_tokens", "pooling"}
    assert payload["name"] == service.config.model
    assert payload["model_version"].startswith(service.config.model + "@")
    assert payload["dim"] == HIDDEN_SIZE
    assert payload["max_tokens"] == SERVICE_MAX_TOKENS
    assert payload["pooling"] == "cls"
    # stable across requests
    assert requests.get(service.url + "/health", timeout=30).json() == payload


def test_embed_happy_path(service):
    body = {
        "inputs": [
            {"segments": ["the appeal is dismissed"]},
            {"segments": ["rent was due", "the tenant failed to pay"]},
            {"segments": ["the appeal is dismissed"]},
        ],
    }
    response = post_embed(service, body)
    assert response.status_code == 200
    payload = response.json()
    assert set(payload) == {"dim", "vectors", "model_version"}
    assert payload["dim"] == HIDDEN_SIZE
    assert len(payload["vectors"]) == 3
    for vector in payload["vectors"]:
        assert len(vector) == HIDDEN_SIZE
        assert all(math.isfinite(component) for component in vector)
    # order-aligned: identical inputs produce identical rows, the pair differs
    assert payload["vectors"][0] == payload["vectors"][2]
    assert payload["vectors"][0] != payload["vectors"][1]


def test_identical_requests_bit_identical(service):
    body = {"inputs": [{"segments": ["fee", "paid"]}, {"segments": ["costs reserved"]}]}
    first = post_embed(service, body).json()
    second = post_embed(service, body).json()
    assert first == second


def test_degenerate_segments_are_valid(service):
    response = post_embed(service, {"inputs": [{"segments": [""]}, {"segments": ["", ""]}]})
    assert response.status_code == 200
    vectors = response.json()["vectors"]
    assert len(vectors) == 2 and vectors[0] != vectors[1]


def test_model_name_checked_when_present(service):
    good = post_embed(
        service, {"model": service.config.model, "inputs": [{"segments": ["x"]}]}
    )
    assert good.status_code == 200
    bad = post_embed(service, {"model": "someone/else", "inputs": [{"segments": ["x"]}]})
    assert bad.status_code == 400
    assert "error" in bad.json()


def test_malformed_json_is_400(service):
    response = requests.post(
        service.url + "/embed",
        data="{this is not json",
        headers={"Content-Type": "application/json"},
        timeout=30,
    )
    assert response.status_code == 400
    assert "error" in response.json()


@pytest.mark.parametrize(
    "body",
    [
        {"inputs": []},
        {"inputs": [{"segments": []}]},
        {"inputs": [{"segments": ["a", "b", "c"]}]},
        {"inputs": [{"segments": [1, 2]}]},
        {"inputs": [{"segments": ["a"]}], "max_tokens": 2},
        {"inputs": "nope"},
        {},
    ],
)
def test_schema_violations_are_400(service, body):
    response = post_embed(service, body)
    assert response.status_code == 400
    assert "error" in response.json()


def test_unknown_route_is_404(service):
    assert requests.get(service.url + "/nope", timeout=30).status_code == 404
    assert requests.post(service.url + "/summarize", json={}, timeout=30).status_code == 404


def test_model_load_failure_is_503(broken_service):
    health = requests.get(broken_service.url + "/health", timeout=30)
    assert health.status_code == 503
    assert "error" in health.json()
    embed = post_embed(broken_service, {"inputs": [{"segments": ["x"]}]})
    assert embed.status_code == 503


def test_engine_contract_suite_passes_unmodified(service):
    backend = RemoteBackend(base_url=service.url, timeout_s=60)
    check_backend_contract(backend)


def test_healthcheck_dim_equals_embed_dim(service):
    health = requests.get(service.url + "/health", timeout=30).json()
    payload = post_embed(service, {"inputs": [{"segments": ["any text"]}]}).json()
    assert health["dim"] == payload["dim"] == len(payload["vectors"][0])
