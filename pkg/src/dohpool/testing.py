"""Local RFC 8484 servers with throwaway certificates, for tests and simulations.

:func:`make_test_pki` mints a private CA and a ``localhost`` leaf signed by
it; clients trust the CA through ``ResolverEndpoint.ca_file`` only, so TLS
verification stays on. :class:`MockDohServer` answers DoH POST/GET with a
configurable address list, HTTP status or silence.
"""

from __future__ import annotations

import base64
import datetime
import ipaddress
import os
import ssl
import tempfile
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional, Sequence
from urllib.parse import parse_qs, urlsplit

from .codec import AddressRecord, MalformedMessage, RCode, RRType, decode_message, encode_message, make_response
from .doh import DNS_MEDIA_TYPE, ResolverEndpoint


@dataclass(frozen=True)
class TestPKI:
    __test__ = False  # not a pytest class

    directory: str
    ca_file: str
    cert_file: str
    key_file: str


def make_test_pki(directory: Optional[str] = None) -> TestPKI:
    """Write a CA certificate and a CA-signed localhost/127.0.0.1 server certificate."""
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import ExtendedKeyUsageOID, NameOID

    directory = directory or tempfile.mkdtemp(prefix="dohpool-pki-")
    now = datetime.datetime.now(datetime.timezone.utc)
    start, end = now - datetime.timedelta(days=1), now + datetime.timedelta(days=30)

    ca_key = ec.generate_private_key(ec.SECP256R1())
    ca_name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "dohpool test CA")])
    ca_cert = (
        x509.CertificateBuilder()
        .subject_name(ca_name)
        .issuer_name(ca_name)
        .public_key(ca_key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(start)
        .not_valid_after(end)
        .add_extension(x509.BasicConstraints(ca=True, path_length=0), critical=True)
        .add_extension(
            x509.KeyUsage(
                digital_signature=True, content_commitment=False, key_encipherment=False,
                data_encipherment=False, key_agreement=False, key_cert_sign=True,
                crl_sign=True, encipher_only=False, decipher_only=False,
            ),
            critical=True,
        )
        .add_extension(x509.SubjectKeyIdentifier.from_public_key(ca_key.public_key()), critical=False)
        .sign(ca_key, hashes.SHA256())
    )

    key = ec.generate_private_key(ec.SECP256R1())
    cert = (
        x509.CertificateBuilder()
        .subject_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "localhost")]))
        .issuer_name(ca_name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(start)
        .not_valid_after(end)
        .add_extension(
            x509.SubjectAlternativeName(
                [x509.DNSName("localhost"), x509.IPAddress(ipaddress.ip_address("127.0.0.1"))]
            ),
            critical=False,
        )
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        .add_extension(x509.ExtendedKeyUsage([ExtendedKeyUsageOID.SERVER_AUTH]), critical=False)
        .add_extension(
            x509.AuthorityKeyIdentifier.from_issuer_public_key(ca_key.public_key()), critical=False
        )
        .sign(ca_key, hashes.SHA256())
    )

    pem = serialization.Encoding.PEM
    paths = TestPKI(
        directory,
        os.path.join(directory, "ca.pem"),
        os.path.join(directory, "server.pem"),
        os.path.join(directory, "server.key"),
    )
    with open(paths.ca_file, "wb") as fh:
        fh.write(ca_cert.public_bytes(pem))
    with open(paths.cert_file, "wb") as fh:
        fh.write(cert.public_bytes(pem))
    with open(paths.key_file, "wb") as fh:
        fh.write(
            key.private_bytes(pem, serialization.PrivateFormat.PKCS8, serialization.NoEncryption())
        )
    return paths


def _record_for(qname, address: str, ttl: int) -> AddressRecord:
    ip = ipaddress.ip_address(address)
    return AddressRecord(qname, RRType.A if ip.version == 4 else RRType.AAAA, ttl, ip.packed)


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: "_Server"

    def log_message(self, format, *args):  # quiet
        pass

    def do_POST(self):
        length = int(self.headers.get("content-length", 0))
        self._answer(self.rfile.read(length))

    def do_GET(self):
        params = parse_qs(urlsplit(self.path).query)
        encoded = params.get("dns", [""])[0]
        try:
            wire = base64.urlsafe_b64decode(encoded + "=" * (-len(encoded) % 4))
        except ValueError:
            self._reply(400, b"bad dns parameter", "text/plain")
            return
        self._answer(wire)

    def _answer(self, wire: bytes) -> None:
        mock = self.server.mock
        mock.requests.append((self.command, self.path, dict(self.headers), wire))
        if mock.hang:
            mock._released.wait(mock.hang_limit)
            self.close_connection = True
            return
        if mock.delay:
            mock._released.wait(mock.delay)
        if mock.status != 200:
            self._reply(mock.status, b"upstream error", "text/plain")
            return
        try:
            query = decode_message(wire)
        except MalformedMessage:
            self._reply(400, b"malformed query", "text/plain")
            return
        if mock.responder is not None:
            body = mock.responder(query)
        else:
            answers = [_record_for(query.question.qname, a, mock.ttl) for a in mock.addresses]
            body = encode_message(make_response(query, answers, mock.rcode))
        self._reply(200, body, mock.content_type)

    def _reply(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("content-type", content_type)
        self.send_header("content-length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    mock: "MockDohServer"


class MockDohServer:
    """A DoH resolver on 127.0.0.1 serving a fixed answer list over TLS.

    Args:
        addresses: addresses returned for every question, in order; A or AAAA
            is chosen per address, independent of the question type.
        status: HTTP status to return instead of a DNS answer.
        hang: accept requests but never answer (until stopped).
        delay: seconds to wait before answering.
        responder: full override, maps the decoded query to response bytes.
    """

    def __init__(
        self,
        pki: TestPKI,
        addresses: Sequence[str] = (),
        *,
        label: str = "mock",
        status: int = 200,
        rcode: int = RCode.NOERROR,
        ttl: int = 300,
        hang: bool = False,
        hang_limit: float = 30.0,
        delay: float = 0.0,
        content_type: str = DNS_MEDIA_TYPE,
        responder: Optional[Callable] = None,
        path: str = "/dns-query",
    ):
        self.pki = pki
        self.addresses = list(addresses)
        self.label = label
        self.status = status
        self.rcode = rcode
        self.ttl = ttl
        self.hang = hang
        self.hang_limit = hang_limit
        self.delay = delay
        self.content_type = content_type
        self.responder = responder
        self.path = path
        self.requests: list = []
        self._released = threading.Event()
        self._httpd: Optional[_Server] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        return f"https://localhost:{self.port}{self.path}"

    def endpoint(self, method: str = "POST", timeout_ms: int = 2000) -> ResolverEndpoint:
        return ResolverEndpoint(self.label, self.url, method=method, timeout_ms=timeout_ms, ca_file=self.pki.ca_file)

    def start(self) -> "MockDohServer":
        httpd = _Server(("127.0.0.1", 0), _Handler)
        httpd.mock = self
        ctx = ssl.create_default_context(ssl.Purpose.CLIENT_AUTH)
        ctx.load_cert_chain(self.pki.cert_file, self.pki.key_file)
        # handshake in the handler thread, not the accept loop
        httpd.socket = ctx.wrap_socket(httpd.socket, server_side=True, do_handshake_on_connect=False)
        self._httpd = httpd
        self._thread = threading.Thread(target=httpd.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._released.set()
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._thread.join(timeout=5)
            self._httpd = None

    def __enter__(self) -> "MockDohServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
