"""In-memory petstore with toggleable logical bugs.

B1  POST /pet answers 200 instead of 201.
B2  POST /pet accepts photoUrls that are not http(s) URLs.
B3  POST /order accepts an order for a deleted pet with 200.
B4  GET /pet/{petId} with a non-numeric id crashes with 500.

With every bug off the service follows its OpenAPI document exactly.
Responses carry no clock-dependent content.
"""

from __future__ import annotations

import copy
import errno
import json
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources
from typing import Any
from urllib.parse import parse_qs, urlsplit

from ..errors import PortInUse

ALL_BUGS = frozenset({"B1", "B2", "B3", "B4"})
PET_STATUSES = ("available", "pending", "sold")
SEED_PET_ID = 7


def openapi_text() -> str:
    return resources.files("logitest.fixture").joinpath("petstore.yaml").read_text(encoding="utf-8")


def openapi_path() -> str:
    return str(resources.files("logitest.fixture").joinpath("petstore.yaml"))


@dataclass
class FixtureState:
    users: dict[int, dict] = field(default_factory=dict)
    sessions: set[str] = field(default_factory=set)
    pets: dict[int, dict] = field(default_factory=dict)
    orders: dict[int, dict] = field(default_factory=dict)
    deleted_pet_ids: set[int] = field(default_factory=set)
    next_user_id: int = 1
    next_pet_id: int = 1
    next_order_id: int = 1

    @classmethod
    def seeded(cls) -> "FixtureState":
        state = cls()
        state.pets[SEED_PET_ID] = {
            "id": SEED_PET_ID,
            "name": "doggie",
            "category": {"id": 1, "name": "dogs"},
            "photoUrls": ["https://img.example.com/doggie.png"],
            "status": "available",
        }
        state.next_pet_id = SEED_PET_ID + 1
        return state


class Reply(Exception):
    """Raised by handlers to short-circuit with an error response."""

    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _valid_url(value: Any) -> bool:
    if not isinstance(value, str):
        return False
    parts = urlsplit(value)
    return parts.scheme in ("http", "https") and bool(parts.netloc)


def _int_field(body: dict, name: str) -> int:
    value = body.get(name)
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, str) and value.strip().lstrip("-").isdigit():
            return int(value)
        raise Reply(400, f"{name} must be an integer")
    return value


def _parse_id(raw: str, what: str) -> int:
    if not raw.isdigit():
        raise Reply(400, f"invalid {what} id {raw!r}")
    return int(raw)


class PetstoreApp:
    """Request dispatch, independent of the socket server so it can be unit tested."""

    def __init__(self, bugs: set[str] | frozenset[str] = ALL_BUGS, seed_data: bool = True):
        unknown = set(bugs) - ALL_BUGS
        if unknown:
            raise ValueError(f"unknown bug toggles: {', '.join(sorted(unknown))}")
        self.bugs = set(bugs)
        self._snapshot = FixtureState.seeded() if seed_data else FixtureState()
        self.state = copy.deepcopy(self._snapshot)
        self.lock = threading.Lock()

    def reset(self) -> FixtureState:
        with self.lock:
            self.state = copy.deepcopy(self._snapshot)
            return self.state

    # each handler returns (status, payload); payload is JSON-serialisable or raw text
    def handle(self, method: str, raw_path: str, headers: dict[str, str], body: bytes
               ) -> tuple[int, str, bytes]:
        parts = urlsplit(raw_path)
        path = parts.path
        query = parse_qs(parts.query)
        with self.lock:
            try:
                if path == "/echo" or path.startswith("/echo/"):
                    status, payload = 200, {"method": method, "raw_path": raw_path,
                                            "headers": dict(sorted(headers.items())),
                                            "body": body.decode("utf-8", "replace")}
                elif path == "/openapi" and method == "GET":
                    return 200, "application/yaml", openapi_text().encode("utf-8")
                else:
                    status, payload = self._route(method, path, query, body)
            except Reply as exc:
                status, payload = exc.status, {"code": exc.status, "message": exc.message}
        if isinstance(payload, str):
            return status, "text/plain; charset=utf-8", payload.encode("utf-8")
        return status, "application/json", json.dumps(payload).encode("utf-8")

    def _json(self, body: bytes) -> dict:
        try:
            data = json.loads(body or b"null")
        except ValueError:
            raise Reply(400, "request body is not valid JSON") from None
        if not isinstance(data, dict):
            raise Reply(400, "request body must be a JSON object")
        return data

    def _route(self, method: str, path: str, query: dict, body: bytes) -> tuple[int, Any]:
        segs = [s for s in path.split("/") if s]
        if segs == ["user", "register"] and method == "POST":
            return self.register(self._json(body))
        if segs == ["user", "login"] and method == "POST":
            return self.login(self._json(body))
        if segs == ["pet"] and method == "POST":
            return self.create_pet(self._json(body))
        if segs == ["pet", "findByStatus"] and method == "GET":
            return self.find_by_status(query)
        if len(segs) == 2 and segs[0] == "pet":
            if method == "GET":
                return self.get_pet(segs[1])
            if method == "PUT":
                return self.update_pet(segs[1], self._json(body))
            if method == "DELETE":
                return self.delete_pet(segs[1])
            raise Reply(405, "method not allowed")
        if segs == ["order"] and method == "POST":
            return self.create_order(self._json(body))
        if len(segs) == 2 and segs[0] == "order" and method == "GET":
            return self.get_order(segs[1])
        raise Reply(404, f"no route for {method} {path}")

    def register(self, data: dict) -> tuple[int, Any]:
        username, password = data.get("username"), data.get("password")
        if not isinstance(username, str) or not username or not isinstance(password, str) or not password:
            raise Reply(400, "username and password are required")
        if any(u["username"] == username for u in self.state.users.values()):
            raise Reply(409, f"username {username!r} already taken")
        uid = self.state.next_user_id
        self.state.next_user_id += 1
        self.state.users[uid] = {"id": uid, "username": username, "password": password,
                                 "email": data.get("email")}
        return 201, {"id": uid, "username": username, "email": data.get("email")}

    def login(self, data: dict) -> tuple[int, Any]:
        for user in self.state.users.values():
            if user["username"] == data.get("username") and user["password"] == data.get("password"):
                token = f"token-{user['id']}"
                self.state.sessions.add(token)
                return 200, {"token": token, "userId": user["id"]}
        raise Reply(401, "invalid username or password")

    def _validated_pet(self, data: dict) -> dict:
        name = data.get("name")
        if not isinstance(name, str) or not name.strip():
            raise Reply(400, "name is required")
        urls = data.get("photoUrls")
        if not isinstance(urls, list) or not all(isinstance(u, str) for u in urls):
            raise Reply(400, "photoUrls must be a list of strings")
        if "B2" not in self.bugs:
            bad = [u for u in urls if not _valid_url(u)]
            if bad:
                raise Reply(400, f"invalid photo URL {bad[0]!r}")
        status = data.get("status", "available")
        if status not in PET_STATUSES:
            raise Reply(400, f"invalid status {status!r}")
        category = data.get("category")
        if category is not None and not isinstance(category, dict):
            raise Reply(400, "category must be an object")
        return {"name": name, "category": category, "photoUrls": urls, "status": status}

    def create_pet(self, data: dict) -> tuple[int, Any]:
        pet = self._validated_pet(data)
        pid = self.state.next_pet_id
        self.state.next_pet_id += 1
        pet = {"id": pid, **pet}
        self.state.pets[pid] = pet
        return (200 if "B1" in self.bugs else 201), pet

    def find_by_status(self, query: dict) -> tuple[int, Any]:
        values = query.get("status") or []
        if not values or any(v not in PET_STATUSES for v in values):
            raise Reply(400, "status must be one of available, pending, sold")
        return 200, [p for _, p in sorted(self.state.pets.items()) if p["status"] in values]

    def get_pet(self, raw_id: str) -> tuple[int, Any]:
        if not raw_id.isdigit() and "B4" in self.bugs:
            return 500, (
                "Traceback (most recent call last):\n"
                '  File "petstore/handlers.py", line 88, in get_pet\n'
                "    pet_id = int(raw_id)\n"
                f"ValueError: invalid literal for int() with base 10: {raw_id!r}\n"
            )
        pid = _parse_id(raw_id, "pet")
        if pid not in self.state.pets:
            raise Reply(404, f"pet {pid} not found")
        return 200, self.state.pets[pid]

    def update_pet(self, raw_id: str, data: dict) -> tuple[int, Any]:
        pid = _parse_id(raw_id, "pet")
        if pid not in self.state.pets:
            raise Reply(404, f"pet {pid} not found")
        pet = {"id": pid, **self._validated_pet(data)}
        self.state.pets[pid] = pet
        return 200, pet

    def delete_pet(self, raw_id: str) -> tuple[int, Any]:
        pid = _parse_id(raw_id, "pet")
        if pid not in self.state.pets:
            raise Reply(404, f"pet {pid} not found")
        del self.state.pets[pid]
        self.state.deleted_pet_ids.add(pid)
        return 200, {"message": f"pet {pid} deleted"}

    def create_order(self, data: dict) -> tuple[int, Any]:
        pet_id = _int_field(data, "petId")
        quantity = _int_field(data, "quantity")
        if quantity < 1:
            raise Reply(400, "quantity must be at least 1")
        status = 201
        if pet_id not in self.state.pets:
            if not ("B3" in self.bugs and pet_id in self.state.deleted_pet_ids):
                raise Reply(404, f"pet {pet_id} not found")
            status = 200
        oid = self.state.next_order_id
        self.state.next_order_id += 1
        order = {"id": oid, "petId": pet_id, "quantity": quantity, "status": "placed"}
        self.state.orders[oid] = order
        return status, order

    def get_order(self, raw_id: str) -> tuple[int, Any]:
        oid = _parse_id(raw_id, "order")
        if oid not in self.state.orders:
            raise Reply(404, f"order {oid} not found")
        return 200, self.state.orders[oid]


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "fixture-petstore"
    sys_version = ""
    # headers and body go out as separate writes; without this each reply waits on a delayed ACK
    disable_nagle_algorithm = True

    def _serve(self) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        headers = {k.lower(): v for k, v in self.headers.items()}
        status, ctype, payload = self.server.app.handle(self.command, self.path, headers, body)
        self.send_response_only(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    do_GET = do_POST = do_PUT = do_PATCH = do_DELETE = _serve

    def log_message(self, format: str, *args: Any) -> None:  # noqa: A002
        pass


class FixtureServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address: tuple[str, int], app: PetstoreApp):
        self.app = app
        super().__init__(address, _Handler)


class FixtureHandle:
    def __init__(self, server: FixtureServer, thread: threading.Thread):
        self.server = server
        self.thread = thread

    @property
    def app(self) -> PetstoreApp:
        return self.server.app

    @property
    def port(self) -> int:
        return self.server.server_address[1]

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def reset(self) -> FixtureState:
        return self.app.reset()

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self.thread.join(timeout=5)

    def __enter__(self) -> "FixtureHandle":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.stop()


def serve_fixture(port: int = 0, seed_data: bool = True, bugs=ALL_BUGS,
                  host: str = "127.0.0.1") -> FixtureHandle:
    """Start the fixture on a background thread; ``port=0`` picks a free port."""
    app = PetstoreApp(bugs=bugs, seed_data=seed_data)
    try:
        server = FixtureServer((host, port), app)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            raise PortInUse(f"port {port} is already in use") from exc
        raise
    thread = threading.Thread(target=server.serve_forever, name="fixture-petstore", daemon=True)
    thread.start()
    return FixtureHandle(server, thread)


def reset_fixture(handle: FixtureHandle) -> FixtureState:
    return handle.reset()
