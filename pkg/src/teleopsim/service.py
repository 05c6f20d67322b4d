"""Live service: FastAPI app (REST + WebSocket bridge) plus the TCP listener.

The protocol surface is identical over both transports: newline-delimited
JSON frames on raw TCP, or the same JSON payloads one per WebSocket text
frame.  All decoded client messages and simulator ticks funnel into a single
asyncio queue consumed by one task, so the session sees a totally ordered
event stream and remains the sole writer of robot commands.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import socket
import time
from pathlib import Path
from typing import Optional

import uvicorn
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import protocol
from .calibration import RigidTransform, load_calibration
from .config import AppConfig, BadConfig, SCALE_RANGE
from .protocol import (
    Error,
    Hello,
    HelloAck,
    StreamDecoder,
    decode,
    encode,
)
from .robot_sim import RobotSim
from .session import (
    Broadcast,
    ClientJoined,
    ClientLeft,
    ClientMessage,
    Send,
    Session,
    Tick,
)


class BindFailure(Exception):
    code = "bind_failure"


def _now_us() -> int:
    return time.monotonic_ns() // 1000


class _Recorder:
    def __init__(self, path: Optional[str]):
        # line buffered so recordings can be tailed while the server runs
        self._fh = open(path, "w", buffering=1) if path else None

    def record(self, direction: str, msg_payload: dict, client: Optional[str] = None):
        if self._fh is None:
            return
        entry = {"server_ts_us": _now_us(), "dir": direction, "msg": msg_payload}
        if client is not None:
            entry["client"] = client
        self._fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")) + "\n")

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class _Client:
    def __init__(self, client_id: str, role: str):
        self.id = client_id
        self.role = role
        self.outbound: asyncio.Queue[bytes] = asyncio.Queue(maxsize=4096)

    def push(self, line: bytes) -> bool:
        try:
            self.outbound.put_nowait(line)
            return True
        except asyncio.QueueFull:
            return False


class Hub:
    """Owns the session, the event queue, and connected clients."""

    def __init__(
        self,
        cfg: AppConfig,
        calibration: RigidTransform,
        record_path: Optional[str] = None,
    ):
        self.cfg = cfg
        self.model = cfg.arm_model()
        self.sim = RobotSim(self.model, cfg.sim, cfg.start_q())
        self.session = Session(self.model, self.sim, calibration, cfg.session)
        self.calibration = calibration
        self.recorder = _Recorder(record_path)
        self.clients: dict[str, _Client] = {}
        self.events: Optional[asyncio.Queue] = None
        self._tasks: list[asyncio.Task] = []
        self._session_counter = 0
        self._started = False

    # lifecycle ---------------------------------------------------------------

    async def start(self):
        if self._started:
            return
        self._started = True
        self.events = asyncio.Queue()
        self._tasks = [
            asyncio.create_task(self._ticker(), name="hub-ticker"),
            asyncio.create_task(self._consumer(), name="hub-consumer"),
        ]

    async def stop(self):
        if not self._started:
            return
        self._started = False
        for task in self._tasks:
            task.cancel()
        for task in self._tasks:
            with contextlib.suppress(asyncio.CancelledError):
                await task
        self._tasks = []
        self.recorder.close()

    async def _ticker(self):
        period = 1.0 / self.cfg.sim.tick_rate_hz
        while True:
            await asyncio.sleep(period)
            await self.events.put(Tick(t_us=_now_us()))

    async def _consumer(self):
        while True:
            event = await self.events.get()
            outputs = self.session.handle_event(event)
            for out in outputs:
                if isinstance(out, Send):
                    line = encode(out.msg)
                    client = self.clients.get(out.client_id)
                    if client is not None:
                        client.push(line)
                    self.recorder.record("tx", json.loads(line.decode()), out.client_id)
                elif isinstance(out, Broadcast):
                    line = encode(out.msg)
                    for client in self.clients.values():
                        client.push(line)
                    self.recorder.record("state", json.loads(line.decode()))

    # connections -------------------------------------------------------------

    async def _handshake(self, read_line, send_line) -> Optional[_Client]:
        """First frame must be Hello within the timeout; replies HelloAck."""
        timeout = self.cfg.protocol.handshake_timeout_s
        try:
            line = await asyncio.wait_for(read_line(), timeout=timeout)
        except asyncio.TimeoutError:
            await send_line(encode(Error(code="handshake_timeout", detail="no hello")))
            return None
        if line is None:
            return None
        try:
            msg = decode(line)
        except protocol.ProtocolError as exc:
            await send_line(encode(Error(code=exc.code, detail=exc.detail)))
            return None
        if not isinstance(msg, Hello):
            await send_line(
                encode(Error(code="protocol_violation", detail="first message must be hello"))
            )
            return None
        if msg.client_id in self.clients:
            await send_line(
                encode(Error(code="client_id_in_use", detail=msg.client_id))
            )
            return None
        client = _Client(msg.client_id, msg.role)
        self.clients[client.id] = client
        self._session_counter += 1
        ack = HelloAck(session_id=f"s-{self._session_counter}")
        await send_line(encode(ack))
        self.recorder.record("rx", {"type": "hello", "client_id": client.id}, client.id)
        await self.events.put(ClientJoined(client.id, t_us=_now_us()))
        return client

    async def _client_loop(self, client: _Client, read_line, send_line):
        """Pump inbound frames into the event queue until the peer goes away."""
        writer_task = asyncio.create_task(self._writer(client, send_line))
        try:
            while True:
                line = await read_line()
                if line is None:
                    break
                try:
                    msg = decode(line)
                except protocol.ProtocolError as exc:
                    await send_line(encode(Error(code=exc.code, detail=exc.detail)))
                    if exc.fatal:
                        break
                    continue
                self.recorder.record("rx", json.loads(line.decode()), client.id)
                await self.events.put(ClientMessage(client.id, msg, t_us=_now_us()))
        finally:
            writer_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await writer_task
            self.clients.pop(client.id, None)
            await self.events.put(ClientLeft(client.id, t_us=_now_us()))

    async def _writer(self, client: _Client, send_line):
        while True:
            line = await client.outbound.get()
            await send_line(line)

    async def tcp_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        decoder = StreamDecoder()
        lines: list[bytes] = []

        async def read_line() -> Optional[bytes]:
            while not lines:
                data = await reader.read(4096)
                if not data:
                    return None
                try:
                    lines.extend(decoder.feed(data))
                except protocol.ProtocolError:
                    return None
            return lines.pop(0)

        async def send_line(line: bytes):
            writer.write(line)
            await writer.drain()

        try:
            client = await self._handshake(read_line, send_line)
            if client is not None:
                await self._client_loop(client, read_line, send_line)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            with contextlib.suppress(Exception):
                writer.close()
                await writer.wait_closed()


# REST models -----------------------------------------------------------------


class HealthOut(BaseModel):
    status: str
    server_version: str
    tick: int


class StateOut(BaseModel):
    tick: int
    joints_rad: list[float]
    tip_mm: list[float]
    phase: str
    mode: str
    engaged_client: Optional[str]
    gating_violations: int


class ConfigOut(BaseModel):
    scale: float
    insert_increment_mm: float
    insert_velocity_mm_s: float
    standoff_mm: float


class ConfigIn(BaseModel):
    scale: Optional[float] = Field(default=None, ge=SCALE_RANGE[0], le=SCALE_RANGE[1])
    insert_increment_mm: Optional[float] = Field(default=None, gt=0)
    insert_velocity_mm_s: Optional[float] = Field(default=None, gt=0)


class CalibrationOut(BaseModel):
    rotation_wxyz: list[float]
    translation_mm: list[float]


def create_app(hub: Hub, console_dir: Optional[str] = None) -> FastAPI:
    @contextlib.asynccontextmanager
    async def lifespan(_app: FastAPI):
        await hub.start()
        try:
            yield
        finally:
            await hub.stop()

    app = FastAPI(title="teleopsim", version=protocol.SERVER_VERSION, lifespan=lifespan)

    @app.get("/healthz", response_model=HealthOut)
    async def healthz():
        return HealthOut(
            status="ok", server_version=protocol.SERVER_VERSION, tick=hub.sim.tick
        )

    @app.get("/state", response_model=StateOut)
    async def state():
        snap = hub.sim.snapshot()
        return StateOut(
            tick=snap.tick,
            joints_rad=[float(v) for v in snap.q],
            tip_mm=[float(v) for v in snap.tip_mm],
            phase=hub.session.phase,
            mode=hub.session.mode,
            engaged_client=hub.session.engaged_client,
            gating_violations=hub.session.stats.gating_violations,
        )

    @app.get("/config", response_model=ConfigOut)
    async def get_config():
        s = hub.session.cfg
        return ConfigOut(
            scale=s.scale,
            insert_increment_mm=s.insert_increment_mm,
            insert_velocity_mm_s=s.insert_velocity_mm_s,
            standoff_mm=s.standoff_mm,
        )

    @app.put("/config", response_model=ConfigOut)
    async def put_config(body: ConfigIn):
        await hub.events.put(
            ClientMessage(
                "_rest",
                protocol.ConfigSet(
                    scale=body.scale,
                    insert_increment_mm=body.insert_increment_mm,
                    insert_velocity_mm_s=body.insert_velocity_mm_s,
                ),
                t_us=_now_us(),
            )
        )
        # the queue is processed in order; reflect the values as they will land
        s = hub.session.cfg
        return ConfigOut(
            scale=body.scale if body.scale is not None else s.scale,
            insert_increment_mm=body.insert_increment_mm
            if body.insert_increment_mm is not None
            else s.insert_increment_mm,
            insert_velocity_mm_s=body.insert_velocity_mm_s
            if body.insert_velocity_mm_s is not None
            else s.insert_velocity_mm_s,
            standoff_mm=s.standoff_mm,
        )

    @app.get("/calibration", response_model=CalibrationOut)
    async def calibration():
        return CalibrationOut(
            rotation_wxyz=[float(v) for v in hub.calibration.rotation],
            translation_mm=[float(v) for v in hub.calibration.translation],
        )

    @app.websocket("/ws")
    async def websocket_bridge(ws: WebSocket):
        await ws.accept()
        inbound: asyncio.Queue[Optional[bytes]] = asyncio.Queue()

        async def pump():
            try:
                while True:
                    text = await ws.receive_text()
                    await inbound.put(text.encode() + b"\n")
            except WebSocketDisconnect:
                await inbound.put(None)
            except RuntimeError:
                await inbound.put(None)

        pump_task = asyncio.create_task(pump())

        async def read_line() -> Optional[bytes]:
            return await inbound.get()

        async def send_line(line: bytes):
            try:
                await ws.send_text(line.decode().rstrip("\n"))
            except RuntimeError:
                raise ConnectionError("websocket closed")

        try:
            client = await hub._handshake(read_line, send_line)
            if client is not None:
                await hub._client_loop(client, read_line, send_line)
        except (ConnectionError, WebSocketDisconnect):
            pass
        finally:
            pump_task.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await pump_task
            with contextlib.suppress(Exception):
                await ws.close()

    if console_dir and Path(console_dir).is_dir():
        app.mount("/", StaticFiles(directory=console_dir, html=True), name="console")

    return app


def _parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise BadConfig(f"address must be host:port, got {addr!r}")
    return host, int(port)


def load_calibration_or_identity(path: Optional[str]) -> RigidTransform:
    if path is None:
        return RigidTransform.identity()
    p = Path(path)
    if not p.exists():
        raise BadConfig(f"calibration file not found: {p}")
    return load_calibration(p)


def run_server(
    cfg: AppConfig,
    listen: str,
    http_addr: str,
    calibration_path: Optional[str] = None,
    record_path: Optional[str] = None,
    console_dir: Optional[str] = None,
) -> None:
    """Blocking entry point for `teleopsim serve`."""
    tcp_host, tcp_port = _parse_addr(listen)
    http_host, http_port = _parse_addr(http_addr)
    calibration = load_calibration_or_identity(calibration_path)
    hub = Hub(cfg, calibration, record_path)
    if console_dir is None:
        default_console = Path.cwd() / "frontend" / "dist"
        console_dir = str(default_console) if default_console.is_dir() else None
    app = create_app(hub, console_dir)

    try:
        http_sock = socket.create_server((http_host, http_port))
    except OSError as exc:
        raise BindFailure(f"cannot bind http {http_addr}: {exc}") from None

    async def amain():
        try:
            tcp_server = await asyncio.start_server(hub.tcp_connection, tcp_host, tcp_port)
        except OSError as exc:
            http_sock.close()
            raise BindFailure(f"cannot bind tcp {listen}: {exc}") from None
        config = uvicorn.Config(app, log_level="warning", lifespan="on")
        server = uvicorn.Server(config)
        async with tcp_server:
            await server.serve(sockets=[http_sock])

    asyncio.run(amain())
