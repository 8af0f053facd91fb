"""Classic-DNS frontend (UDP and TCP) backed by DoH fan-out and pool combining.

Unmodified stub clients send ordinary A/AAAA queries; each query is fanned
out to every configured DoH resolver concurrently under one deadline, the
answers are combined (``pool`` or ``majority`` mode), and the result is sent
back as a normal DNS response.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import signal
import struct
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Optional

import httpx
import yaml

from .codec import (
    ADDRESS_TYPES,
    AddressRecord,
    DnsHeader,
    DnsMessage,
    MalformedMessage,
    MessageTooLarge,
    Name,
    Question,
    RCode,
    RRClass,
    RRType,
    decode_message,
    encode_message,
    make_response,
)
from .combine import (
    AddressPool,
    CombineInput,
    EmptyPool,
    InsufficientResponders,
    combine_pool,
    majority_vote,
    pool_to_answers,
)
from .doh import Failure, FailureKind, ResolverEndpoint, ResolverResponse, make_client, query
from .security import as_fraction

log = logging.getLogger("dohpool.service")

PORT_ENV = "DOHPOOL_PORT"
LOG_LEVEL_ENV = "DOHPOOL_LOG_LEVEL"
CLASSIC_UDP_LIMIT = 512
MAX_UDP_PAYLOAD = 4096
TCP_IDLE_TIMEOUT = 10.0


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ServiceConfig:
    resolvers: tuple[ResolverEndpoint, ...]
    listen_host: str = "127.0.0.1"
    listen_port: int = 53
    mode: str = "pool"
    x: Fraction = Fraction(1, 2)
    min_responders: Optional[int] = None  # None: all resolvers
    empty_is_failure: bool = False
    deadline_ms: int = 3000
    allowlist: tuple[str, ...] = ()
    cache_enabled: bool = True
    cache_max_ttl: int = 300
    log_level: str = "INFO"

    def __post_init__(self) -> None:
        object.__setattr__(self, "resolvers", tuple(self.resolvers))
        object.__setattr__(self, "allowlist", tuple(self.allowlist))
        object.__setattr__(self, "x", as_fraction(self.x))
        n = len(self.resolvers)
        if n == 0:
            raise ConfigError("at least one resolver is required")
        labels = [r.label for r in self.resolvers]
        if len(set(labels)) != n:
            raise ConfigError(f"resolver labels must be unique: {labels}")
        if self.mode not in ("pool", "majority"):
            raise ConfigError(f"mode must be 'pool' or 'majority', got {self.mode!r}")
        if self.min_responders is not None and not 0 <= self.min_responders <= n:
            raise ConfigError(f"min_responders must lie in [0, {n}], got {self.min_responders}")
        if not 0 <= self.x <= 1:
            raise ConfigError(f"x must lie in [0, 1], got {self.x}")
        if self.deadline_ms <= 0:
            raise ConfigError("deadline_ms must be positive")
        if not 0 <= self.listen_port <= 65535:
            raise ConfigError(f"bad listen port {self.listen_port}")

    @property
    def required_responders(self) -> int:
        return len(self.resolvers) if self.min_responders is None else self.min_responders

    def guarantee(self) -> str:
        n, m = len(self.resolvers), self.required_responders
        scope = "configured" if m == n else f"responding (>= {m} of {n})"
        if self.mode == "majority":
            what = "every served address is vouched for by a strict majority of responding resolvers"
        else:
            what = (
                f"if at least {self.x} of the {scope} resolvers are unattacked, "
                f"at least that share of each served pool comes from them"
            )
        return f"mode={self.mode} N={n} min_responders={m}: {what}"

    @classmethod
    def from_dict(cls, data: dict[str, Any], env: Optional[dict] = None) -> "ServiceConfig":
        env = os.environ if env is None else env
        data = dict(data)
        listen = data.pop("listen", {}) or {}
        cache = data.pop("cache", {}) or {}
        raw_resolvers = data.pop("resolvers", None) or []
        resolvers = []
        for r in raw_resolvers:
            r = dict(r)
            if "timeout" in r:
                r["timeout_ms"] = r.pop("timeout")
            resolvers.append(ResolverEndpoint(**r))
        kwargs: dict[str, Any] = {"resolvers": resolvers}
        if "host" in listen:
            kwargs["listen_host"] = listen["host"]
        if "port" in listen:
            kwargs["listen_port"] = int(listen["port"])
        if "enabled" in cache:
            kwargs["cache_enabled"] = bool(cache["enabled"])
        if "max_ttl" in cache:
            kwargs["cache_max_ttl"] = int(cache["max_ttl"])
        if "per_query_deadline" in data:
            data["deadline_ms"] = data.pop("per_query_deadline")
        if "domain_allowlist" in data:
            data["allowlist"] = data.pop("domain_allowlist") or ()
        if "x" in data and isinstance(data["x"], str):
            data["x"] = Fraction(data["x"])
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs.update(data)
        if env.get(PORT_ENV):
            kwargs["listen_port"] = int(env[PORT_ENV])
        if env.get(LOG_LEVEL_ENV):
            kwargs["log_level"] = env[LOG_LEVEL_ENV].upper()
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str, env: Optional[dict] = None) -> "ServiceConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data, env)


class AnswerCache:
    """Combined answers keyed by (lowercased name, qtype); thread-safe."""

    def __init__(self, max_ttl: int, clock: Callable[[], float] = time.monotonic):
        self.max_ttl = max_ttl
        self.clock = clock
        self._lock = threading.Lock()
        self._entries: dict = {}

    @staticmethod
    def key(question: Question):
        return (question.qname.canonical(), question.qtype)

    def lookup(self, question: Question) -> Optional[tuple[AddressRecord, ...]]:
        now = self.clock()
        with self._lock:
            hit = self._entries.get(self.key(question))
            if hit is None:
                return None
            expires, answers = hit
            if now >= expires:
                del self._entries[self.key(question)]
                return None
            return answers

    def store(self, question: Question, answers, ttl: Optional[int] = None) -> None:
        answers = tuple(answers)
        if not answers:
            return
        if ttl is None:
            ttl = min(a.ttl for a in answers)
        ttl = min(ttl, self.max_ttl)
        if ttl <= 0:
            return
        with self._lock:
            self._entries[self.key(question)] = (self.clock() + ttl, answers)

    def __len__(self) -> int:
        return len(self._entries)


async def fan_out(
    question: Question,
    config: ServiceConfig,
    clients: Optional[dict[str, httpx.AsyncClient]] = None,
) -> CombineInput:
    """Query every resolver at once; stragglers past the deadline become timeouts."""
    clients = clients or {}
    deadline = config.deadline_ms / 1000
    tasks = [
        asyncio.ensure_future(query(ep, question, deadline, clients.get(ep.label)))
        for ep in config.resolvers
    ]
    start = time.monotonic()
    done, pending = await asyncio.wait(tasks, timeout=deadline)
    for t in pending:
        t.cancel()
    responses = []
    for ep, task in zip(config.resolvers, tasks):
        if task in done and not task.cancelled() and task.exception() is None:
            responses.append(task.result())
        else:
            rtt = (time.monotonic() - start) * 1000
            detail = "" if task in pending else repr(task.exception())
            responses.append(ResolverResponse(ep.label, failure=Failure(FailureKind.TIMEOUT, detail=detail), rtt_ms=rtt))
    if pending:
        await asyncio.gather(*pending, return_exceptions=True)
    return CombineInput(responses, config.min_responders, config.empty_is_failure)


@dataclass
class Resolution:
    rcode: int
    answers: list[AddressRecord] = field(default_factory=list)
    pool: Optional[AddressPool] = None
    responses: list[ResolverResponse] = field(default_factory=list)
    cached: bool = False
    reason: str = ""


class PoolResolver:
    """Per-process resolution engine shared by the UDP and TCP listeners."""

    def __init__(self, config: ServiceConfig, clock: Callable[[], float] = time.monotonic):
        self.config = config
        self.cache = AnswerCache(config.cache_max_ttl, clock) if config.cache_enabled else None
        self.upstream_queries = 0
        self._clients: Optional[dict[str, httpx.AsyncClient]] = None
        self._allow = tuple(Name.from_text(s) for s in config.allowlist)

    def _get_clients(self) -> dict[str, httpx.AsyncClient]:
        if self._clients is None:
            self._clients = {ep.label: make_client(ep) for ep in self.config.resolvers}
        return self._clients

    async def aclose(self) -> None:
        if self._clients:
            await asyncio.gather(*(c.aclose() for c in self._clients.values()), return_exceptions=True)
        self._clients = None

    def allowed(self, name: Name) -> bool:
        return not self._allow or any(name.is_subdomain_of(s) for s in self._allow)

    def check(self, question: Question) -> Optional[str]:
        """Reason to refuse ``question``, or None."""
        if question.qclass != RRClass.IN:
            return f"class {question.qclass} unsupported"
        if question.qtype not in ADDRESS_TYPES:
            return f"qtype {question.qtype} unsupported; address lookups only"
        if not self.allowed(question.qname):
            return "name not in allowlist"
        return None

    async def resolve(self, question: Question) -> Resolution:
        refusal = self.check(question)
        if refusal:
            return Resolution(RCode.REFUSED, reason=refusal)
        if self.cache is not None:
            hit = self.cache.lookup(question)
            if hit is not None:
                # cached records may differ from the question only by name case
                return Resolution(RCode.NOERROR, [AddressRecord(question.qname, a.rtype, a.ttl, a.address) for a in hit], cached=True)

        self.upstream_queries += len(self.config.resolvers)
        inp = await fan_out(question, self.config, self._get_clients())
        res = Resolution(RCode.NOERROR, responses=list(inp.responses))
        try:
            if self.config.mode == "majority":
                res.answers = [
                    AddressRecord(question.qname, question.qtype, a.ttl, a.address) for a in majority_vote(inp)
                ]
            else:
                res.pool = combine_pool(inp)
                res.answers = pool_to_answers(res.pool, question)
        except InsufficientResponders as exc:
            return Resolution(RCode.SERVFAIL, responses=res.responses, reason=str(exc))
        except EmptyPool as exc:
            res.pool = exc.pool
            res.reason = str(exc)
        if self.cache is not None and res.answers:
            self.cache.store(question, res.answers)
        return res

    async def handle_wire(self, wire: bytes, transport: str = "udp") -> Optional[bytes]:
        """Answer one query datagram/segment; None means send nothing."""
        start = time.monotonic()
        try:
            query_msg = decode_message(wire)
        except MalformedMessage as exc:
            log.info(json.dumps({"event": "formerr", "detail": str(exc), "transport": transport}))
            return _formerr(wire)
        if query_msg.header.qr:
            return None
        if query_msg.header.opcode != 0:
            return encode_message(make_response(query_msg, rcode=RCode.NOTIMP))
        if query_msg.question is None:
            return encode_message(make_response(query_msg, rcode=RCode.FORMERR))

        res = await self.resolve(query_msg.question)
        reply = make_response(query_msg, res.answers, res.rcode)
        max_size = _udp_limit(query_msg) if transport == "udp" else None
        try:
            out = encode_message(reply, max_size=max_size)
        except MessageTooLarge:
            if transport == "udp":
                reply.answers = []
                reply.header.tc = True
                out = encode_message(reply)
            else:
                out = encode_message(make_response(query_msg, rcode=RCode.SERVFAIL))
        self._log(query_msg.question, res, reply, transport, time.monotonic() - start)
        return out

    def _log(self, q: Question, res: Resolution, reply: DnsMessage, transport: str, elapsed: float) -> None:
        if not log.isEnabledFor(logging.INFO):
            return
        entry = {
            "qname": str(q.qname),
            "qtype": RRType(q.qtype).name if q.qtype in RRType._value2member_map_ else q.qtype,
            "mode": self.config.mode,
            "rcode": RCode(reply.header.rcode).name,
            "answers": len(reply.answers),
            "tc": reply.header.tc,
            "cached": res.cached,
            "transport": transport,
            "ms": round(elapsed * 1000, 1),
            "resolvers": [
                {"label": r.resolver, "outcome": "ok" if r.ok else str(r.failure),
                 "n": len(r.answers) if r.ok else None, "rtt_ms": round(r.rtt_ms, 1)}
                for r in res.responses
            ],
        }
        if res.pool is not None:
            entry["k"] = res.pool.k
            entry["n_used"] = res.pool.n_used
        if res.reason:
            entry["reason"] = res.reason
        log.info(json.dumps(entry))


def _udp_limit(query_msg: DnsMessage) -> int:
    size = query_msg.edns_payload_size()
    if size is None:
        return CLASSIC_UDP_LIMIT
    return max(CLASSIC_UDP_LIMIT, min(size, MAX_UDP_PAYLOAD))


def _formerr(wire: bytes) -> Optional[bytes]:
    if len(wire) < 2:
        return None
    ident = struct.unpack("!H", wire[:2])[0]
    rd = len(wire) >= 3 and bool(wire[2] & 0x01)
    header = DnsHeader(id=ident, qr=True, rd=rd, ra=True, rcode=RCode.FORMERR)
    return encode_message(DnsMessage(header=header))


class _UdpProtocol(asyncio.DatagramProtocol):
    def __init__(self, resolver: PoolResolver):
        self.resolver = resolver
        self.transport = None
        self.tasks: set = set()

    def connection_made(self, transport) -> None:
        self.transport = transport

    def datagram_received(self, data: bytes, addr) -> None:
        task = asyncio.ensure_future(self._answer(data, addr))
        self.tasks.add(task)
        task.add_done_callback(self.tasks.discard)

    async def _answer(self, data: bytes, addr) -> None:
        try:
            out = await self.resolver.handle_wire(data, "udp")
        except Exception:
            log.exception("unhandled error answering UDP query")
            out = None
        if out is not None and self.transport is not None:
            self.transport.sendto(out, addr)


async def _tcp_client(resolver: PoolResolver, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
    try:
        while True:
            try:
                prefix = await asyncio.wait_for(reader.readexactly(2), TCP_IDLE_TIMEOUT)
                (length,) = struct.unpack("!H", prefix)
                data = await asyncio.wait_for(reader.readexactly(length), TCP_IDLE_TIMEOUT)
            except (asyncio.IncompleteReadError, asyncio.TimeoutError, ConnectionError):
                break
            out = await resolver.handle_wire(data, "tcp")
            if out is None:
                continue
            writer.write(struct.pack("!H", len(out)) + out)
            await writer.drain()
    except Exception:
        log.exception("unhandled error on TCP connection")
    finally:
        writer.close()


class RunningService:
    """Bound UDP and TCP listeners sharing one resolver."""

    def __init__(self, resolver: PoolResolver, udp_transport, tcp_server):
        self.resolver = resolver
        self.udp_transport = udp_transport
        self.tcp_server = tcp_server

    @property
    def udp_address(self) -> tuple:
        return self.udp_transport.get_extra_info("sockname")[:2]

    @property
    def tcp_address(self) -> tuple:
        return self.tcp_server.sockets[0].getsockname()[:2]

    async def close(self) -> None:
        self.udp_transport.close()
        self.tcp_server.close()
        await self.tcp_server.wait_closed()
        await self.resolver.aclose()


async def start_service(config: ServiceConfig, resolver: Optional[PoolResolver] = None) -> RunningService:
    """Bind UDP and TCP on the configured address.

    With port 0 the UDP port is picked by the OS and TCP binds the same number.
    """
    resolver = resolver or PoolResolver(config)
    loop = asyncio.get_running_loop()
    udp_transport, _ = await loop.create_datagram_endpoint(
        lambda: _UdpProtocol(resolver), local_addr=(config.listen_host, config.listen_port)
    )
    port = udp_transport.get_extra_info("sockname")[1]
    try:
        tcp_server = await asyncio.start_server(
            lambda r, w: _tcp_client(resolver, r, w), config.listen_host, port, reuse_address=True
        )
    except OSError:
        udp_transport.close()
        raise
    return RunningService(resolver, udp_transport, tcp_server)


async def _serve_until_stopped(config: ServiceConfig, stop: Optional[asyncio.Event] = None) -> None:
    stop = stop or asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except (NotImplementedError, RuntimeError):
            pass
    service = await start_service(config)
    log.info("listening on udp %s:%d and tcp %s:%d", *service.udp_address, *service.tcp_address)
    log.info("assumed guarantee: %s", config.guarantee())
    if config.required_responders < len(config.resolvers):
        log.warning(
            "min_responders=%d < N=%d: the guarantee covers the responding subset only",
            config.required_responders, len(config.resolvers),
        )
    try:
        await stop.wait()
    finally:
        await service.close()


def serve(config: ServiceConfig) -> None:
    """Run the frontend until SIGINT/SIGTERM."""
    logging.basicConfig(level=config.log_level, format="%(asctime)s %(levelname)s %(name)s %(message)s")
    try:
        asyncio.run(_serve_until_stopped(config))
    except KeyboardInterrupt:
        pass
