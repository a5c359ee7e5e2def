"""Serve a cluster over real sockets, hit it with raw HTTP, then run a
short closed-loop level against it. Everything stays on loopback."""

import asyncio
import dataclasses
import json
import os

from thzbench.live import LiveServer, _http_roundtrip, run_live_level_async
from thzbench.loadgen import Windows
from thzbench.scenario import load_scenario

HERE = os.path.dirname(os.path.abspath(__file__))
SCENARIO = os.path.join(HERE, "..", "configs", "live-default.json")


async def call(host, port, method, path, body=None):
    payload = b"" if body is None else json.dumps(body).encode()
    head = (
        f"{method} {path} HTTP/1.1\r\nHost: {host}\r\n"
        f"Content-Length: {len(payload)}\r\nConnection: close\r\n\r\n"
    ).encode()
    reader, writer = await asyncio.open_connection(host, port)
    try:
        return await _http_roundtrip(reader, writer, head + payload)
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionResetError, BrokenPipeError):
            pass


async def main():
    scenario = load_scenario(SCENARIO)
    server = LiveServer(dataclasses.replace(scenario, bind="127.0.0.1:0"))
    host, port = await server.start()
    print(f"serving on {host}:{port}")

    status, body = await call(host, port, "GET", "/healthz")
    print(f"GET /healthz -> {status} {body.decode()}")

    req = {
        "id": 1,
        "kind": "ResourceUpdate",
        "qos": {"bitrate_bps": 1e9, "ber_max": 1e-6, "bandwidth_hz": 5e9},
        "state": {"frequency_hz": 300e9, "distance_m": 5.0, "humidity_pct": 50.0},
        "deadline_ms": 5000.0,
    }
    status, body = await call(host, port, "POST", "/request", req)
    reply = json.loads(body)
    print(f"POST /request -> {status} status={reply['status']}")

    res = await run_live_level_async(
        f"http://{host}:{port}", scenario.workload, users=50,
        windows=Windows(warmup_ms=500.0, measure_ms=2000.0), seed=3)
    print(f"\n50 users for 2 s: {res.record.ok} ok, mean {res.record.mean_ms:.2f} ms, "
          f"{res.record.rps:.0f} rps, conn errors {res.conn_errors}")

    status, body = await call(host, port, "GET", "/stats")
    served = json.loads(body)["connections_served"]
    print(f"server handled {served} connections")
    await server.drain_and_close()


asyncio.run(main())
