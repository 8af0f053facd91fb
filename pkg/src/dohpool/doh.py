"""RFC 8484 DNS-over-HTTPS client for a single resolver.

Every outcome of a lookup, including timeouts and transport errors, comes
back as a :class:`ResolverResponse` value. The fan-out layer needs to see
partial failure, so nothing here raises past :func:`query`.
"""

from __future__ import annotations

import asyncio
import base64
import enum
import ssl
import time
from dataclasses import dataclass
from typing import Optional
from urllib.parse import urlsplit

import httpx

from .codec import (
    ADDRESS_TYPES,
    AddressRecord,
    DnsMessage,
    MalformedMessage,
    MessageTooLarge,
    Question,
    RCode,
    decode_message,
    encode_message,
    make_query,
)

DNS_MEDIA_TYPE = "application/dns-message"
MAX_GET_URL = 2048


class FailureKind(enum.Enum):
    TIMEOUT = "timeout"
    TRANSPORT_ERROR = "transport_error"
    HTTP_STATUS = "http_status"
    MALFORMED_DNS_PAYLOAD = "malformed_dns_payload"
    DNS_ERROR = "dns_error"


@dataclass(frozen=True)
class Failure:
    kind: FailureKind
    code: Optional[int] = None  # HTTP status or DNS rcode
    detail: str = ""

    def __str__(self) -> str:
        return self.kind.value if self.code is None else f"{self.kind.value}({self.code})"


@dataclass(frozen=True)
class ResolverEndpoint:
    """One trusted DoH resolver.

    ``ca_file`` narrows the trust store to a single bundle (used for test
    servers with private certificates). Certificate validation itself cannot
    be switched off.
    """

    label: str
    url: str
    method: str = "POST"
    timeout_ms: int = 2000
    ca_file: Optional[str] = None

    expected_media_type = DNS_MEDIA_TYPE

    def __post_init__(self) -> None:
        if not self.label:
            raise ValueError("resolver label must be non-empty")
        if urlsplit(self.url).scheme.lower() != "https":
            raise ValueError(f"resolver {self.label!r}: url must use https, got {self.url!r}")
        object.__setattr__(self, "method", self.method.upper())
        if self.method not in ("GET", "POST"):
            raise ValueError(f"resolver {self.label!r}: method must be GET or POST")
        if self.timeout_ms <= 0:
            raise ValueError(f"resolver {self.label!r}: timeout must be positive")

    @property
    def base_url(self) -> str:
        # RFC 8484 URI template form, e.g. https://dns.example/dns-query{?dns}
        return self.url.replace("{?dns}", "")


@dataclass(frozen=True)
class ResolverResponse:
    resolver: str
    answers: Optional[tuple[AddressRecord, ...]] = None
    failure: Optional[Failure] = None
    rtt_ms: float = 0.0
    rcode: Optional[int] = None

    def __post_init__(self) -> None:
        if (self.answers is None) == (self.failure is None):
            raise ValueError("exactly one of answers / failure must be set")
        if self.answers is not None:
            object.__setattr__(self, "answers", tuple(self.answers))

    @property
    def ok(self) -> bool:
        return self.failure is None

    def summary(self) -> str:
        if self.ok:
            return f"{self.resolver}: {len(self.answers)} answers in {self.rtt_ms:.1f} ms"
        return f"{self.resolver}: {self.failure} after {self.rtt_ms:.1f} ms"


@dataclass(frozen=True)
class DohRequest:
    method: str
    url: str
    headers: dict
    body: Optional[bytes] = None


def b64url_nopad(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).rstrip(b"=").decode("ascii")


def build_doh_request(endpoint: ResolverEndpoint, msg: DnsMessage, method: Optional[str] = None) -> DohRequest:
    """Describe the HTTP request carrying ``msg`` to ``endpoint``.

    The DNS id is forced to 0 so identical questions are cacheable; responses
    are matched on the question instead.

    Raises:
        MessageTooLarge: for GET when the URL would exceed 2048 bytes.
    """
    if msg.header.qr:
        raise ValueError("DoH request must carry a query, not a response")
    if not msg.header.rd:
        raise ValueError("DoH request must set RD")
    method = (method or endpoint.method).upper()
    header = msg.header
    wire = encode_message(
        DnsMessage(
            header=type(header)(**{**vars(header), "id": 0}),
            question=msg.question,
            answers=list(msg.answers),
            raw_extra=list(msg.raw_extra),
        )
    )
    headers = {"accept": DNS_MEDIA_TYPE}
    if method == "POST":
        headers["content-type"] = DNS_MEDIA_TYPE
        return DohRequest("POST", endpoint.base_url, headers, wire)
    sep = "&" if "?" in endpoint.base_url else "?"
    url = f"{endpoint.base_url}{sep}dns={b64url_nopad(wire)}"
    if len(url.encode()) > MAX_GET_URL:
        raise MessageTooLarge(f"GET url is {len(url)} bytes, limit {MAX_GET_URL}")
    return DohRequest("GET", url, headers, None)


def ssl_context(endpoint: ResolverEndpoint) -> ssl.SSLContext:
    # create_default_context loads only ca_file (not the system store) when it is given
    ctx = ssl.create_default_context(cafile=endpoint.ca_file)
    assert ctx.verify_mode == ssl.CERT_REQUIRED and ctx.check_hostname
    return ctx


def make_client(endpoint: ResolverEndpoint) -> httpx.AsyncClient:
    return httpx.AsyncClient(verify=ssl_context(endpoint), timeout=endpoint.timeout_ms / 1000, trust_env=False)


def extract_answers(reply: DnsMessage, question: Question) -> tuple[AddressRecord, ...]:
    """A/AAAA answers matching the question's type, in upstream order.

    CNAME chains are not followed: terminal address records are taken
    regardless of owner name and intermediate records are ignored.
    """
    return tuple(r for r in reply.answers if r.rtype == question.qtype)


def interpret_reply(
    label: str, status: int, content_type: Optional[str], body: bytes, question: Question, rtt_ms: float
) -> ResolverResponse:
    if status != 200:
        return ResolverResponse(label, failure=Failure(FailureKind.HTTP_STATUS, status), rtt_ms=rtt_ms)
    media = (content_type or "").split(";")[0].strip().lower()
    if media != DNS_MEDIA_TYPE:
        fail = Failure(FailureKind.MALFORMED_DNS_PAYLOAD, detail=f"content-type {content_type!r}")
        return ResolverResponse(label, failure=fail, rtt_ms=rtt_ms)
    try:
        reply = decode_message(body)
    except MalformedMessage as exc:
        return ResolverResponse(label, failure=Failure(FailureKind.MALFORMED_DNS_PAYLOAD, detail=str(exc)), rtt_ms=rtt_ms)
    if not reply.header.qr or reply.question != question:
        fail = Failure(FailureKind.MALFORMED_DNS_PAYLOAD, detail="reply does not answer the question asked")
        return ResolverResponse(label, failure=fail, rtt_ms=rtt_ms, rcode=reply.header.rcode)
    if reply.header.rcode != RCode.NOERROR:
        fail = Failure(FailureKind.DNS_ERROR, reply.header.rcode)
        return ResolverResponse(label, failure=fail, rtt_ms=rtt_ms, rcode=reply.header.rcode)
    return ResolverResponse(label, answers=extract_answers(reply, question), rtt_ms=rtt_ms, rcode=RCode.NOERROR)


async def _exchange(client: httpx.AsyncClient, req: DohRequest) -> httpx.Response:
    return await client.request(req.method, req.url, headers=req.headers, content=req.body)


async def query(
    endpoint: ResolverEndpoint,
    question: Question,
    deadline: Optional[float] = None,
    client: Optional[httpx.AsyncClient] = None,
) -> ResolverResponse:
    """Ask one resolver for ``question``; never blocks past ``deadline`` seconds.

    The effective budget is the smaller of the endpoint timeout and the
    deadline. A client may be shared across calls; otherwise a short-lived
    one is created.
    """
    if question.qtype not in ADDRESS_TYPES:
        raise ValueError(f"qtype {question.qtype} is not A or AAAA")
    budget = endpoint.timeout_ms / 1000
    if deadline is not None:
        budget = max(0.0, min(budget, deadline))
    msg = make_query(question.qname, question.qtype)
    msg.question = question
    try:
        req = build_doh_request(endpoint, msg)
    except MessageTooLarge:
        req = build_doh_request(endpoint, msg, method="POST")

    start = time.monotonic()
    elapsed = lambda: (time.monotonic() - start) * 1000.0  # noqa: E731
    owned = client is None
    if owned:
        client = make_client(endpoint)
    try:
        resp = await asyncio.wait_for(_exchange(client, req), timeout=budget)
        body = resp.content
    except (asyncio.TimeoutError, httpx.TimeoutException):
        return ResolverResponse(endpoint.label, failure=Failure(FailureKind.TIMEOUT), rtt_ms=elapsed())
    except (httpx.HTTPError, OSError, ssl.SSLError) as exc:
        fail = Failure(FailureKind.TRANSPORT_ERROR, detail=f"{type(exc).__name__}: {exc}")
        return ResolverResponse(endpoint.label, failure=fail, rtt_ms=elapsed())
    finally:
        if owned:
            await client.aclose()
    return interpret_reply(endpoint.label, resp.status_code, resp.headers.get("content-type"), body, question, elapsed())


def query_sync(endpoint: ResolverEndpoint, question: Question, deadline: Optional[float] = None) -> ResolverResponse:
    return asyncio.run(query(endpoint, question, deadline))
