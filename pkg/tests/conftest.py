import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qapool.gateway import BackendConfig, Gateway

DATA_DIR = Path(__file__).parent / "data"


def make_scenario_file(tmp_path, scenario: dict, name: str = "scenario.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(scenario, ensure_ascii=False), encoding="utf-8")
    return path


def make_mock_gateway(tmp_path, scenario: dict, **config_overrides) -> Gateway:
    path = make_scenario_file(tmp_path, scenario)
    defaults = dict(
        kind="mock",
        model_id="scripted",
        cache_dir=str(tmp_path / "cache"),
        scenario_path=str(path),
        requests_per_minute=100000,
    )
    defaults.update(config_overrides)
    return Gateway(BackendConfig(**defaults))


@pytest.fixture
def mock_gateway_factory(tmp_path):
    counter = iter(range(10000))

    def factory(scenario: dict, **config_overrides) -> Gateway:
        sub = tmp_path / f"gw{next(counter)}"
        sub.mkdir()
        return make_mock_gateway(sub, scenario, **config_overrides)

    return factory


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        server = self.server
        with server.state_lock:
            server.hits += 1
            hit_number = server.hits
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length)) if length else {}
        with server.state_lock:
            server.requests.append(
                {"path": self.path, "payload": payload, "auth": self.headers.get("Authorization")}
            )
            script = server.script
        status, body = script(self.path, payload, hit_number)
        blob = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(blob)))
        self.end_headers()
        self.wfile.write(blob)

    def log_message(self, *args):
        pass


class StubApi:
    """Tiny scripted HTTP server for completion/embedding wire tests."""

    def __init__(self):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self.server.hits = 0
        self.server.requests = []
        self.server.state_lock = threading.Lock()
        self.server.script = lambda path, payload, hit: (
            200,
            {"choices": [{"text": " stub completion", "finish_reason": "stop"}]},
        )
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    @property
    def hits(self) -> int:
        return self.server.hits

    @property
    def requests(self) -> list:
        return self.server.requests

    def set_script(self, fn):
        self.server.script = fn

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def stub_api():
    api = StubApi()
    yield api
    api.close()


class VirtualClock:
    """Deterministic clock + sleep pair for rate-limit and retry tests."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self.sleeps: list[float] = []

    def clock(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        self.sleeps.append(seconds)
        self.now += max(seconds, 0.0)


@pytest.fixture
def virtual_clock():
    return VirtualClock()
