"""DNS wire-format encoder/decoder.

Covers the subset needed by a classic-DNS frontend and by RFC 8484 bodies:
header, a single question, and A/AAAA answers. Every other resource record
is carried through as a :class:`RawRecord` so that re-encoding a decoded
message keeps its section layout. Output never uses name compression; input
compression pointers are followed with a loop guard.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Optional, Union

HEADER_SIZE = 12
MAX_NAME_WIRE = 255
MAX_LABEL = 63
MAX_TTL = 2**31 - 1
MAX_MESSAGE = 65535

_HEADER = struct.Struct("!HHHHHH")
_QTAIL = struct.Struct("!HH")
_RRHEAD = struct.Struct("!HHIH")


class RRType(IntEnum):
    A = 1
    NS = 2
    CNAME = 5
    SOA = 6
    PTR = 12
    MX = 15
    TXT = 16
    AAAA = 28
    SRV = 33
    DNAME = 39
    OPT = 41
    ANY = 255


class RRClass(IntEnum):
    IN = 1
    ANY = 255


class RCode(IntEnum):
    NOERROR = 0
    FORMERR = 1
    SERVFAIL = 2
    NXDOMAIN = 3
    NOTIMP = 4
    REFUSED = 5


ADDRESS_TYPES = (RRType.A, RRType.AAAA)
_ADDRESS_LEN = {RRType.A: 4, RRType.AAAA: 16}

# rdata layouts that embed domain names: (fixed prefix bytes, name count, fixed suffix bytes)
_NAME_RDATA = {
    RRType.NS: (0, 1, 0),
    RRType.CNAME: (0, 1, 0),
    RRType.PTR: (0, 1, 0),
    RRType.DNAME: (0, 1, 0),
    RRType.MX: (2, 1, 0),
    RRType.SOA: (0, 2, 20),
}


class MalformedMessage(ValueError):
    """Wire data that cannot be parsed; answered with FORMERR."""


class MessageTooLarge(ValueError):
    """Serialized message would exceed the caller's transport limit."""


def _escape_label(label: bytes) -> str:
    out = []
    for b in label:
        c = chr(b)
        if c in ".\\":
            out.append("\\" + c)
        elif 0x21 <= b <= 0x7E:
            out.append(c)
        else:
            out.append("\\%03d" % b)
    return "".join(out)


def _split_text(text: str) -> list[bytes]:
    labels: list[bytes] = []
    cur = bytearray()
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\\":
            if text[i + 1 : i + 4].isdigit() and len(text[i + 1 : i + 4]) == 3:
                cur.append(int(text[i + 1 : i + 4]))
                i += 4
                continue
            if i + 1 >= len(text):
                raise ValueError(f"dangling escape in {text!r}")
            cur.extend(text[i + 1].encode("latin-1"))
            i += 2
            continue
        if c == ".":
            if not cur:
                raise ValueError(f"empty label in {text!r}")
            labels.append(bytes(cur))
            cur = bytearray()
        else:
            try:
                cur.extend(c.encode("ascii"))
            except UnicodeEncodeError:
                raise ValueError(f"non-ASCII name {text!r}; pass it IDNA-encoded") from None
        i += 1
    if cur:
        labels.append(bytes(cur))
    return labels


class Name:
    """Domain name as a tuple of raw labels. Equality and hashing ignore ASCII case."""

    __slots__ = ("labels",)

    def __init__(self, labels: Iterable[bytes] = ()):
        labels = tuple(bytes(l) for l in labels)
        for label in labels:
            if not 1 <= len(label) <= MAX_LABEL:
                raise ValueError(f"label length {len(label)} out of range")
        if sum(len(l) + 1 for l in labels) + 1 > MAX_NAME_WIRE:
            raise ValueError("name longer than 255 bytes")
        self.labels = labels

    @classmethod
    def from_text(cls, text: str) -> "Name":
        if text in ("", "."):
            return cls(())
        return cls(_split_text(text))

    @classmethod
    def coerce(cls, value: Union["Name", str]) -> "Name":
        return value if isinstance(value, Name) else cls.from_text(value)

    def to_wire(self) -> bytes:
        return b"".join(bytes([len(l)]) + l for l in self.labels) + b"\x00"

    def canonical(self) -> tuple[bytes, ...]:
        return tuple(l.lower() for l in self.labels)

    def is_subdomain_of(self, other: "Name") -> bool:
        mine, theirs = self.canonical(), Name.coerce(other).canonical()
        return len(theirs) <= len(mine) and mine[len(mine) - len(theirs) :] == theirs

    def __eq__(self, other: object) -> bool:
        if isinstance(other, str):
            other = Name.from_text(other)
        if not isinstance(other, Name):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.canonical())

    def __str__(self) -> str:
        if not self.labels:
            return "."
        return ".".join(_escape_label(l) for l in self.labels)

    def __repr__(self) -> str:
        return f"Name({str(self)!r})"


@dataclass(frozen=True)
class Question:
    qname: Name
    qtype: int
    qclass: int = RRClass.IN

    def __post_init__(self) -> None:
        object.__setattr__(self, "qname", Name.coerce(self.qname))
        _check_u16(self.qtype, "qtype")
        _check_u16(self.qclass, "qclass")


def _address_bytes(rtype: int, address) -> bytes:
    if isinstance(address, (bytes, bytearray)):
        raw = bytes(address)
    else:
        raw = ipaddress.ip_address(address).packed
    if rtype not in _ADDRESS_LEN:
        raise ValueError(f"rtype {rtype} is not an address type")
    if len(raw) != _ADDRESS_LEN[rtype]:
        raise ValueError(f"{RRType(rtype).name} address must be {_ADDRESS_LEN[rtype]} bytes, got {len(raw)}")
    return raw


@dataclass(frozen=True)
class AddressRecord:
    name: Name
    rtype: int
    ttl: int
    address: bytes

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", Name.coerce(self.name))
        object.__setattr__(self, "address", _address_bytes(self.rtype, self.address))
        if not 0 <= self.ttl <= 0xFFFFFFFF:
            raise ValueError(f"ttl {self.ttl} out of range")

    @property
    def text(self) -> str:
        return str(ipaddress.ip_address(self.address))

    def to_wire(self) -> bytes:
        ttl = min(self.ttl, MAX_TTL)
        return self.name.to_wire() + _RRHEAD.pack(self.rtype, RRClass.IN, ttl, len(self.address)) + self.address


@dataclass(frozen=True)
class RawRecord:
    """A resource record outside the address-pool scope, kept for pass-through.

    ``position`` is the record's index within its section so the section can be
    rebuilt in the original order. Embedded names in known rdata layouts are
    stored decompressed.
    """

    section: str  # "answer" | "authority" | "additional"
    position: int
    name: Name
    rtype: int
    rclass: int
    ttl: int
    rdata: bytes

    def to_wire(self) -> bytes:
        ttl = self.ttl if self.rtype == RRType.OPT else min(self.ttl, MAX_TTL)
        return self.name.to_wire() + _RRHEAD.pack(self.rtype, self.rclass, ttl, len(self.rdata)) + self.rdata


@dataclass
class DnsHeader:
    id: int = 0
    qr: bool = False
    opcode: int = 0
    aa: bool = False
    tc: bool = False
    rd: bool = True
    ra: bool = False
    rcode: int = RCode.NOERROR

    def flags(self) -> int:
        return (
            (int(self.qr) << 15)
            | ((self.opcode & 0xF) << 11)
            | (int(self.aa) << 10)
            | (int(self.tc) << 9)
            | (int(self.rd) << 8)
            | (int(self.ra) << 7)
            | (self.rcode & 0xF)
        )

    @classmethod
    def from_flags(cls, id: int, flags: int) -> "DnsHeader":
        return cls(
            id=id,
            qr=bool(flags & 0x8000),
            opcode=(flags >> 11) & 0xF,
            aa=bool(flags & 0x0400),
            tc=bool(flags & 0x0200),
            rd=bool(flags & 0x0100),
            ra=bool(flags & 0x0080),
            rcode=flags & 0xF,
        )


@dataclass
class DnsMessage:
    header: DnsHeader = field(default_factory=DnsHeader)
    question: Optional[Question] = None
    answers: list[AddressRecord] = field(default_factory=list)
    raw_extra: list[RawRecord] = field(default_factory=list)

    def section(self, name: str) -> list[RawRecord]:
        return sorted((r for r in self.raw_extra if r.section == name), key=lambda r: r.position)

    @property
    def counts(self) -> tuple[int, int, int, int]:
        return (
            int(self.question is not None),
            len(self.answers) + len(self.section("answer")),
            len(self.section("authority")),
            len(self.section("additional")),
        )

    def edns_payload_size(self) -> Optional[int]:
        """UDP payload size advertised by an OPT record, if any."""
        for r in self.raw_extra:
            if r.section == "additional" and r.rtype == RRType.OPT:
                return r.rclass
        return None


def _check_u16(value: int, what: str) -> None:
    if not 0 <= value <= 0xFFFF:
        raise ValueError(f"{what} {value} out of 16-bit range")


# -- decoding -----------------------------------------------------------------


def _read_name(wire: bytes, offset: int) -> tuple[Name, int]:
    """Decode a possibly compressed name; returns the name and the offset after it."""
    labels: list[bytes] = []
    seen: set[int] = set()
    end: Optional[int] = None
    wire_len = 1
    pos = offset
    while True:
        if pos >= len(wire):
            raise MalformedMessage("name runs past end of buffer")
        length = wire[pos]
        kind = length & 0xC0
        if kind == 0xC0:
            if pos + 1 >= len(wire):
                raise MalformedMessage("truncated compression pointer")
            target = ((length & 0x3F) << 8) | wire[pos + 1]
            if target in seen or target >= len(wire):
                raise MalformedMessage("compression pointer loop or overrun")
            seen.add(target)
            if end is None:
                end = pos + 2
            pos = target
            continue
        if kind != 0:
            raise MalformedMessage(f"unsupported label type 0x{kind:02x}")
        if length == 0:
            break
        if pos + 1 + length > len(wire):
            raise MalformedMessage("label overruns buffer")
        labels.append(wire[pos + 1 : pos + 1 + length])
        wire_len += length + 1
        if wire_len > MAX_NAME_WIRE:
            raise MalformedMessage("name longer than 255 bytes")
        pos += 1 + length
    return Name(labels), (end if end is not None else pos + 1)


def _normalize_rdata(wire: bytes, rtype: int, start: int, rdlen: int) -> bytes:
    layout = _NAME_RDATA.get(rtype)
    if layout is None:
        return wire[start : start + rdlen]
    prefix, names, suffix = layout
    stop = start + rdlen
    if prefix > rdlen:
        raise MalformedMessage("rdata shorter than fixed prefix")
    out = [wire[start : start + prefix]]
    pos = start + prefix
    for _ in range(names):
        name, pos = _read_name(wire[:stop], pos)
        out.append(name.to_wire())
    if pos + suffix != stop:
        raise MalformedMessage("rdata length does not match its contents")
    out.append(wire[pos:stop])
    return b"".join(out)


def decode_message(wire: bytes) -> DnsMessage:
    """Parse a DNS message.

    Raises:
        MalformedMessage: on truncation, label overrun, pointer loops, section
            counts that do not match the buffer, or more than one question.
    """
    wire = bytes(wire)
    if len(wire) < HEADER_SIZE:
        raise MalformedMessage(f"message is {len(wire)} bytes, shorter than the header")
    ident, flags, qd, an, ns, ar = _HEADER.unpack_from(wire)
    msg = DnsMessage(header=DnsHeader.from_flags(ident, flags))
    if qd > 1:
        raise MalformedMessage(f"{qd} questions; only one is supported")
    pos = HEADER_SIZE
    if qd:
        qname, pos = _read_name(wire, pos)
        if pos + 4 > len(wire):
            raise MalformedMessage("truncated question")
        qtype, qclass = _QTAIL.unpack_from(wire, pos)
        pos += 4
        msg.question = Question(qname, qtype, qclass)

    for section, count in (("answer", an), ("authority", ns), ("additional", ar)):
        for index in range(count):
            name, pos = _read_name(wire, pos)
            if pos + _RRHEAD.size > len(wire):
                raise MalformedMessage(f"truncated {section} record header")
            rtype, rclass, ttl, rdlen = _RRHEAD.unpack_from(wire, pos)
            pos += _RRHEAD.size
            if pos + rdlen > len(wire):
                raise MalformedMessage(f"{section} rdata overruns buffer")
            if section == "answer" and rtype in _ADDRESS_LEN and rclass == RRClass.IN:
                if rdlen != _ADDRESS_LEN[rtype]:
                    raise MalformedMessage(f"bad rdata length {rdlen} for {RRType(rtype).name}")
                msg.answers.append(AddressRecord(name, rtype, ttl, wire[pos : pos + rdlen]))
            else:
                rdata = _normalize_rdata(wire, rtype, pos, rdlen)
                msg.raw_extra.append(RawRecord(section, index, name, rtype, rclass, ttl, rdata))
            pos += rdlen

    if pos != len(wire):
        raise MalformedMessage(f"{len(wire) - pos} trailing bytes after last section")
    return msg


# -- encoding -----------------------------------------------------------------


def _answer_section(msg: DnsMessage) -> list[bytes]:
    raw = msg.section("answer")
    total = len(msg.answers) + len(raw)
    slots: list[Optional[bytes]] = [None] * total
    leftovers = []
    for r in raw:
        if 0 <= r.position < total and slots[r.position] is None:
            slots[r.position] = r.to_wire()
        else:
            leftovers.append(r.to_wire())
    addresses = iter(a.to_wire() for a in msg.answers)
    out = []
    for slot in slots:
        if slot is not None:
            out.append(slot)
        else:
            nxt = next(addresses, None)
            if nxt is not None:
                out.append(nxt)
    out.extend(addresses)
    out.extend(leftovers)
    return out


def encode_message(msg: DnsMessage, max_size: Optional[int] = None) -> bytes:
    """Serialize ``msg`` without name compression.

    Raises:
        MessageTooLarge: if the result exceeds ``max_size`` (or 65535 bytes).
        ValueError: if a header field is out of range.
    """
    h = msg.header
    _check_u16(h.id, "id")
    if h.rcode not in RCode.__members__.values():
        raise ValueError(f"rcode {h.rcode} may not be emitted")
    if not 0 <= h.opcode <= 15:
        raise ValueError(f"opcode {h.opcode} out of range")
    counts = msg.counts
    for c in counts:
        _check_u16(c, "section count")

    parts = [_HEADER.pack(h.id, h.flags(), *counts)]
    if msg.question is not None:
        q = msg.question
        parts.append(q.qname.to_wire() + _QTAIL.pack(q.qtype, q.qclass))
    parts.extend(_answer_section(msg))
    parts.extend(r.to_wire() for r in msg.section("authority"))
    parts.extend(r.to_wire() for r in msg.section("additional"))
    wire = b"".join(parts)

    limit = MAX_MESSAGE if max_size is None else min(max_size, MAX_MESSAGE)
    if len(wire) > limit:
        raise MessageTooLarge(f"{len(wire)} bytes exceeds limit of {limit}")
    return wire


# -- convenience builders -------------------------------------------------------


def make_query(name: Union[Name, str], qtype: int = RRType.A, id: int = 0, rd: bool = True) -> DnsMessage:
    return DnsMessage(header=DnsHeader(id=id, rd=rd), question=Question(name, qtype))


def make_response(
    query: DnsMessage,
    answers: Iterable[AddressRecord] = (),
    rcode: int = RCode.NOERROR,
) -> DnsMessage:
    """Response echoing the query's id, RD bit and question."""
    header = DnsHeader(id=query.header.id, qr=True, opcode=query.header.opcode, rd=query.header.rd, ra=True, rcode=rcode)
    return DnsMessage(header=header, question=query.question, answers=list(answers))
