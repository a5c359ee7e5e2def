"""Live socket mode: the same orchestration engine driven by the asyncio
clock instead of the simulated one, speaking a minimal HTTP/1.1 subset
(GET/POST, Content-Length framing, keep-alive; no chunked encoding, no TLS).

Endpoints:
  GET  /healthz                 -> 200 "ok"
  GET  /config?key=<b64>        -> 200 StoreRecord JSON | 404  (direct store read)
  POST /config                  -> 201 stored record  (direct store write)
  POST /request                 -> request workflow; body RequestEnvelope JSON
  GET  /request?env=<b64>       -> same workflow, envelope in the query string
  GET  /stats                   -> engine and store counters (diagnostic)

Terminal statuses map onto HTTP codes: Ok 200, Timeout 504, Rejected 429,
Failed 500. The same closed-loop generator that drives simulations runs here
over sockets, so sweep methodology is identical in both modes.
"""

from __future__ import annotations

import asyncio
import base64
import json
import signal
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple
from urllib.parse import parse_qs, urlsplit

from .cluster import build_cluster
from .domain import (
    ConfigKey,
    RequestEnvelope,
    ResponseEnvelope,
    Status,
    ValidationError,
    make_config_key,
)
from .loadgen import (
    LevelResult,
    Windows,
    Workload,
    OP_KINDS,
    pool_qos,
    pool_state,
)
from .metrics import aggregate
from .orchestration import make_rng
from .scenario import ScenarioConfig
from .store import ConfigStore, StoreRecord

MS = 1_000_000

STATUS_HTTP = {
    Status.OK: 200,
    Status.TIMEOUT: 504,
    Status.REJECTED: 429,
    Status.FAILED: 500,
}
HTTP_STATUS = {code: status for status, code in STATUS_HTTP.items()}

_REASONS = {
    200: "OK",
    201: "Created",
    400: "Bad Request",
    404: "Not Found",
    429: "Too Many Requests",
    500: "Internal Server Error",
    504: "Gateway Timeout",
}

# header block must fit comfortably; bodies are framed by Content-Length
_MAX_LINE = 16384
_MAX_BODY = 4 * 1024 * 1024


def raise_nofile_limit(target: int = 65536) -> int:
    """Lift the soft fd limit toward `target`; thousands of sockets need it."""
    import resource

    soft, hard = resource.getrlimit(resource.RLIMIT_NOFILE)
    want = min(target, hard if hard > 0 else target)
    if soft < want:
        try:
            resource.setrlimit(resource.RLIMIT_NOFILE, (want, hard))
            soft = want
        except (ValueError, OSError):
            pass
    return soft


def split_bind(bind: str) -> Tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"bind must be host:port, got {bind!r}")
    return host, int(port)


class LiveExecutor:
    """Engine executor backed by the asyncio clock, in integer nanoseconds
    since server start."""

    def __init__(self, loop: asyncio.AbstractEventLoop):
        self._loop = loop
        self._t0 = loop.time()

    def now_ns(self) -> int:
        return int((self._loop.time() - self._t0) * 1e9)

    def call_at(self, when_ns: int, fn: Callable[..., None], *args: Any):
        return self._loop.call_at(self._t0 + when_ns / 1e9, fn, *args)

    def call_later(self, delay_ns: int, fn: Callable[..., None], *args: Any):
        return self._loop.call_later(max(0, delay_ns) / 1e9, fn, *args)


async def _read_http_request(reader: asyncio.StreamReader):
    """One request off the wire: (method, target, headers, body).

    Returns None on a cleanly closed connection.
    """
    try:
        line = await reader.readuntil(b"\r\n")
    except asyncio.IncompleteReadError as exc:
        if not exc.partial:
            return None
        raise ValueError("truncated request line")
    except asyncio.LimitOverrunError:
        raise ValueError("request line too long")
    parts = line.decode("latin-1").rstrip("\r\n").split(" ")
    if len(parts) != 3:
        raise ValueError(f"malformed request line: {line!r}")
    method, target, version = parts
    if not version.startswith("HTTP/1."):
        raise ValueError(f"unsupported protocol {version!r}")
    headers: Dict[str, str] = {}
    total = 0
    while True:
        raw = await reader.readuntil(b"\r\n")
        total += len(raw)
        if total > _MAX_LINE:
            raise ValueError("header block too large")
        if raw == b"\r\n":
            break
        name, _, value = raw.decode("latin-1").rstrip("\r\n").partition(":")
        headers[name.strip().lower()] = value.strip()
    body = b""
    if "content-length" in headers:
        length = int(headers["content-length"])
        if length < 0 or length > _MAX_BODY:
            raise ValueError("bad content length")
        body = await reader.readexactly(length)
    return method, target, headers, body


def _http_response(code: int, body: bytes, content_type: str, keep_alive: bool) -> bytes:
    reason = _REASONS.get(code, "Unknown")
    conn = "keep-alive" if keep_alive else "close"
    head = (
        f"HTTP/1.1 {code} {reason}\r\n"
        f"Content-Type: {content_type}\r\n"
        f"Content-Length: {len(body)}\r\n"
        f"Connection: {conn}\r\n"
        "\r\n"
    )
    return head.encode("latin-1") + body


class LiveServer:
    """One cluster served over loopback sockets."""

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.store: Optional[ConfigStore] = None
        self.engine = None
        self.executor: Optional[LiveExecutor] = None
        self._server: Optional[asyncio.AbstractServer] = None
        self.connections_served = 0
        self.protocol_errors = 0

    @property
    def bound_address(self) -> Tuple[str, int]:
        sock = self._server.sockets[0]
        return sock.getsockname()[:2]

    async def start(self, bind: Optional[str] = None) -> Tuple[str, int]:
        raise_nofile_limit()
        host, port = split_bind(bind or self.scenario.bind)
        loop = asyncio.get_running_loop()
        self.executor = LiveExecutor(loop)
        self.store = ConfigStore(self.scenario.store_path)
        seed = self.scenario.seed if self.scenario.seed is not None else 0
        self.engine = build_cluster(
            self.scenario.cluster, self.executor, self.store,
            self.scenario.params, seed,
        )
        self._server = await asyncio.start_server(
            self._serve_connection, host, port, backlog=2048,
        )
        return self.bound_address

    async def drain_and_close(self, timeout_s: float = 35.0) -> None:
        """Stop accepting, then let in-flight requests finish."""
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        deadline = time.monotonic() + timeout_s
        while self.engine.in_flight > 0 and time.monotonic() < deadline:
            await asyncio.sleep(0.02)
        self.engine.stop_autoscaler()
        if self.store is not None:
            self.store.close()

    async def _serve_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self.connections_served += 1
        try:
            while True:
                try:
                    parsed = await _read_http_request(reader)
                except (ValueError, asyncio.IncompleteReadError):
                    self.protocol_errors += 1
                    writer.write(_http_response(
                        400, b'{"error":"malformed request"}',
                        "application/json", False))
                    await writer.drain()
                    return
                if parsed is None:
                    return
                method, target, headers, body = parsed
                keep = headers.get("connection", "keep-alive").lower() != "close"
                code, payload, ctype = await self._dispatch(method, target, body)
                writer.write(_http_response(code, payload, ctype, keep))
                await writer.drain()
                if not keep:
                    return
        except (ConnectionResetError, BrokenPipeError):
            pass
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass

    async def _dispatch(self, method: str, target: str, body: bytes):
        url = urlsplit(target)
        path, query = url.path, parse_qs(url.query)
        try:
            if method == "GET" and path == "/healthz":
                return 200, b"ok", "text/plain"
            if method == "GET" and path == "/config":
                return self._get_config(query)
            if method == "POST" and path == "/config":
                return self._post_config(body)
            if method == "POST" and path == "/request":
                return await self._run_request(body)
            if method == "GET" and path == "/request":
                raw = query.get("env")
                if not raw:
                    return 400, b'{"error":"missing env parameter"}', "application/json"
                env_json = base64.urlsafe_b64decode(raw[0].encode("ascii"))
                return await self._run_request(env_json)
            if method == "GET" and path == "/stats":
                return 200, json.dumps(self.stats(), separators=(",", ":")).encode(), "application/json"
            return 404, b'{"error":"no such endpoint"}', "application/json"
        except (ValidationError, ValueError, KeyError, json.JSONDecodeError) as exc:
            msg = json.dumps({"error": str(exc)}).encode()
            return 400, msg, "application/json"

    def _get_config(self, query):
        raw = query.get("key")
        if not raw:
            return 400, b'{"error":"missing key parameter"}', "application/json"
        key_items = json.loads(base64.urlsafe_b64decode(raw[0].encode("ascii")))
        record = self.store.read(ConfigKey.from_list(key_items))
        if record is None:
            return 404, b'{"error":"no record"}', "application/json"
        return 200, record.to_json().encode(), "application/json"

    def _post_config(self, body: bytes):
        doc = json.loads(body)
        key = ConfigKey.from_list(doc["key"])
        from .domain import ChannelConfig

        config = ChannelConfig.from_dict(doc["config"])
        ts = self.executor.now_ns()
        version = self.store.write(key, config, ts=ts)
        stored = StoreRecord(key=key, version=version, config=config, ts=ts)
        return 201, stored.to_json().encode(), "application/json"

    async def _run_request(self, body: bytes):
        env = RequestEnvelope.from_json(body)
        loop = asyncio.get_running_loop()
        future: asyncio.Future = loop.create_future()

        def on_complete(resp: ResponseEnvelope) -> None:
            if not future.done():
                future.set_result(resp)

        self.engine.submit_from_user(env, on_complete)
        resp = await future
        return STATUS_HTTP[resp.status], resp.to_json().encode(), "application/json"

    def stats(self) -> dict:
        data = self.engine.stats()
        data["connections_served"] = self.connections_served
        data["protocol_errors"] = self.protocol_errors
        data["uptime_ns"] = self.executor.now_ns()
        return data


def serve_forever(scenario: ScenarioConfig, bind: Optional[str] = None) -> int:
    """Run the server until SIGINT/SIGTERM, then drain in-flight requests."""

    async def _main() -> int:
        server = LiveServer(scenario)
        host, port = await server.start(bind)
        print(f"listening on {host}:{port}", flush=True)
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        for sig in (signal.SIGINT, signal.SIGTERM):
            loop.add_signal_handler(sig, stop.set)
        await stop.wait()
        print("draining", flush=True)
        await server.drain_and_close()
        return 0

    return asyncio.run(_main())


# --- socket-transport load generation -------------------------------------


class LiveTargetError(Exception):
    """The endpoint refused connections or broke protocol during a level."""


@dataclass
class _UserTally:
    ok_lat: List[int]
    ok_bytes: int = 0
    err_in_window: int = 0
    issued: int = 0


def _normalize_url(url: str) -> Tuple[str, int]:
    if url.startswith("http://"):
        url = url[len("http://"):]
    url = url.rstrip("/")
    return split_bind(url)


async def _http_roundtrip(reader, writer, request: bytes) -> Tuple[int, bytes]:
    writer.write(request)
    await writer.drain()
    status_line = await reader.readuntil(b"\r\n")
    code = int(status_line.split(b" ", 2)[1])
    length = 0
    while True:
        raw = await reader.readuntil(b"\r\n")
        if raw == b"\r\n":
            break
        name, _, value = raw.decode("latin-1").partition(":")
        if name.strip().lower() == "content-length":
            length = int(value.strip())
    body = await reader.readexactly(length) if length else b""
    return code, body


def _request_bytes(host: str, env: RequestEnvelope, op: str) -> bytes:
    if op == "read":
        token = base64.urlsafe_b64encode(env.to_json().encode()).decode("ascii")
        head = (
            f"GET /request?env={token} HTTP/1.1\r\n"
            f"Host: {host}\r\nConnection: keep-alive\r\n\r\n"
        )
        return head.encode("latin-1")
    body = env.to_json().encode()
    head = (
        f"POST /request HTTP/1.1\r\n"
        f"Host: {host}\r\nConnection: keep-alive\r\n"
        f"Content-Type: application/json\r\n"
        f"Content-Length: {len(body)}\r\n\r\n"
    )
    return head.encode("latin-1") + body


async def preseed_live(host: str, port: int, workload: Workload, params) -> int:
    """POST a config for every pool key so live reads hit the store."""
    from .estimator import derive_config

    qos = pool_qos(workload.deadline_ms)
    reader, writer = await asyncio.open_connection(host, port)
    seeded = 0
    try:
        for i in range(workload.key_pool):
            state = pool_state(i, workload.key_pool)
            config = derive_config(qos, state, params)
            if config is None:
                raise ValueError(f"pool entry {i} is infeasible under the link budget")
            key = make_config_key(qos, state)
            doc = json.dumps(
                {"key": key.to_list(), "version": 0, "config": config.to_dict(), "ts": 0},
                separators=(",", ":"),
            ).encode()
            head = (
                f"POST /config HTTP/1.1\r\nHost: {host}\r\n"
                f"Connection: keep-alive\r\nContent-Type: application/json\r\n"
                f"Content-Length: {len(doc)}\r\n\r\n"
            ).encode("latin-1")
            code, _ = await _http_roundtrip(reader, writer, head + doc)
            if code != 201:
                raise LiveTargetError(f"preseed write returned HTTP {code}")
            seeded += 1
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionResetError, BrokenPipeError):
            pass
    return seeded


async def run_live_level_async(
    url: str,
    workload: Workload,
    users: int,
    windows: Windows,
    seed: int,
    params=None,
    mode: str = "live",
    site: str = "loopback",
) -> LevelResult:
    """Closed-loop level against a live endpoint; one keep-alive connection
    per user, statuses taken from the HTTP code mapping.

    Raises LiveTargetError if the endpoint cannot be reached at all.
    Connection failures mid-level are tallied and surface in the result.
    """
    from .estimator import LinkBudgetParams

    if users < 0:
        raise ValueError("users must be >= 0")
    params = params or LinkBudgetParams()
    host, port = _normalize_url(url)
    raise_nofile_limit()
    measure_ns = int(windows.measure_ms * MS)
    if users == 0:
        empty = aggregate(mode, site, workload.op, 0, [], 0, measure_ns, 0)
        return LevelResult(record=empty, issued=0,
                           status_counts={s.value: 0 for s in Status},
                           in_flight_end=0)

    try:
        if workload.preseeds_reads:
            await preseed_live(host, port, workload, params)
        else:
            probe_r, probe_w = await asyncio.open_connection(host, port)
            probe_w.close()
            await probe_w.wait_closed()
    except OSError as exc:
        raise LiveTargetError(f"cannot reach {host}:{port}: {exc}")

    loop = asyncio.get_running_loop()
    t0 = loop.time()
    warmup_s = windows.warmup_ms / 1000.0
    stop_issue_s = warmup_s + windows.measure_ms / 1000.0
    think_s = workload.think_ms / 1000.0
    qos = pool_qos(workload.deadline_ms)
    pool = [pool_state(i, workload.key_pool) for i in range(workload.key_pool)]
    rng = make_rng(seed, f"loadgen:{workload.op}:{users}")
    jitters = [float(rng.random() * workload.start_jitter_ms / 1000.0) for _ in range(users)]
    mix_rng = make_rng(seed, "loadgen:mix") if workload.op == "mix" else None
    # one request may outlive the window by the full deadline; cap the wait
    request_timeout_s = workload.deadline_ms / 1000.0 + 10.0

    status_counts: Dict[str, int] = {s.value: 0 for s in Status}
    tally = _UserTally(ok_lat=[])
    conn_errors = 0

    def pick_op(user_idx: int, seq: int) -> str:
        if mix_rng is None:
            return workload.op
        return "read" if mix_rng.random() < workload.read_fraction else "write"

    async def user_loop(idx: int) -> None:
        nonlocal conn_errors
        await asyncio.sleep(jitters[idx])
        try:
            reader, writer = await asyncio.open_connection(host, port)
        except OSError:
            conn_errors += 1
            return
        seq = 0
        try:
            while loop.time() - t0 < stop_issue_s:
                op = pick_op(idx, seq)
                env = RequestEnvelope(
                    id=(idx << 32) | seq,
                    kind=OP_KINDS[op if op in OP_KINDS else "read"],
                    qos=qos,
                    state=pool[(idx + seq) % workload.key_pool],
                    arrival_ts=0.0,
                    deadline_ms=workload.deadline_ms,
                )
                seq += 1
                tally.issued += 1
                sent = loop.time()
                try:
                    code, body = await asyncio.wait_for(
                        _http_roundtrip(reader, writer, _request_bytes(host, env, op)),
                        timeout=request_timeout_s,
                    )
                except (OSError, asyncio.IncompleteReadError, asyncio.TimeoutError):
                    conn_errors += 1
                    return
                done = loop.time()
                status = HTTP_STATUS.get(code, Status.FAILED)
                status_counts[status.value] += 1
                rel = done - t0
                if warmup_s <= rel < stop_issue_s:
                    if status is Status.OK:
                        tally.ok_lat.append(int((done - sent) * 1e9))
                        tally.ok_bytes += len(body)
                    else:
                        tally.err_in_window += 1
                if think_s > 0.0:
                    await asyncio.sleep(think_s)
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError, OSError):
                pass

    await asyncio.gather(*(user_loop(i) for i in range(users)))

    record = aggregate(
        mode=mode,
        site=site,
        op=workload.op,
        users=users,
        ok_latencies_ns=tally.ok_lat,
        err=tally.err_in_window,
        window_ns=measure_ns,
        ok_payload_bytes=tally.ok_bytes,
    )
    return LevelResult(
        record=record,
        issued=tally.issued,
        status_counts=status_counts,
        in_flight_end=0,
        conn_errors=conn_errors,
    )


def run_live_level(url, workload, users, windows, seed, params=None, **kw) -> LevelResult:
    return asyncio.run(run_live_level_async(url, workload, users, windows, seed, params, **kw))
