"""Packets, rules, queues and the composite system state.

Packets and rules are interned: each distinct value is stored once and
queues refer to it by a dense integer id. Queues over packets and flow
tables over rules are therefore plain integer bitsets.
"""
from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import ModelError, TableFull
from .topology import DROP, MAX_PORT, Location

ADD = 0
DEL = 1
OP_NAMES = {ADD: "add", DEL: "del"}


class Field(NamedTuple):
    name: str
    width: int
    hosts: bool = False  # values are host indices, printed by name


class PacketSchema:
    """Header layout plus the optional per-switch ``reached`` history."""

    def __init__(self, fields, history=False, n_switches=0):
        self.fields = tuple(Field(*f) for f in fields)
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise ModelError(f"duplicate header field in {names}")
        if "in_port" in names or "reached" in names:
            raise ModelError("in_port and reached are reserved field names")
        self._index = {f.name: i for i, f in enumerate(self.fields)}
        self.history = history
        self.n_switches = n_switches if history else 0

    def index(self, name):
        return self._index[name]

    def has(self, name):
        return name in self._index

    @property
    def width(self):
        return sum(f.width for f in self.fields) + self.n_switches

    def header(self, **values):
        return tuple(values.get(f.name, 0) for f in self.fields)

    def check(self, header) -> list[str]:
        errs = []
        if len(header) != len(self.fields):
            return [f"header has {len(header)} fields, schema has {len(self.fields)}"]
        for f, v in zip(self.fields, header):
            if not 0 <= v < (1 << f.width):
                errs.append(f"field {f.name}={v} does not fit {f.width} bits")
        return errs

    def encode_header(self, header) -> int:
        code, shift = 0, 0
        for f, v in zip(self.fields, header):
            code |= v << shift
            shift += f.width
        return code

    def decode_header(self, code: int) -> tuple:
        out = []
        for f in self.fields:
            out.append(code & ((1 << f.width) - 1))
            code >>= f.width
        return tuple(out)

    def n_headers(self):
        return 1 << sum(f.width for f in self.fields)

    def digest(self) -> int:
        text = repr((self.fields, self.history, self.n_switches)).encode()
        return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


class Packet(NamedTuple):
    header: tuple
    loc: Location
    reached: int = 0

    @property
    def in_port(self):
        return self.loc.port


@dataclass(frozen=True)
class Rule:
    priority: int
    match: tuple  # sorted (field, value) pairs; "in_port" is allowed
    ports: tuple  # sorted port ids, may contain DROP
    name: str = field(default="", compare=False)

    @staticmethod
    def make(priority, ports, name="", **match):
        return Rule(priority, tuple(sorted(match.items())), tuple(sorted(set(ports))), name)

    @property
    def drops(self):
        return DROP in self.ports

    def matches(self, pkt: Packet, schema: PacketSchema) -> bool:
        for f, v in self.match:
            if f == "in_port":
                if pkt.loc.port != v:
                    return False
            elif pkt.header[schema.index(f)] != v:
                return False
        return True


class Interner:
    """Append-only value-to-id table; safe for concurrent insert-or-get."""

    def __init__(self, limit, kind):
        self.limit = limit
        self.kind = kind
        self._ids = {}
        self.items = []
        self._lock = threading.Lock()

    def __len__(self):
        return len(self.items)

    def intern(self, value) -> int:
        i = self._ids.get(value)
        if i is not None:
            return i
        with self._lock:
            i = self._ids.get(value)
            if i is None:
                if len(self.items) >= self.limit:
                    raise TableFull(f"{self.kind} table full at {self.limit} entries")
                i = len(self.items)
                self.items.append(value)
                self._ids[value] = i
            return i

    def lookup(self, i):
        return self.items[i]

    def find(self, value):
        return self._ids.get(value)


class Barrier(NamedTuple):
    xid: int


class SwitchState(NamedTuple):
    ft: int  # bitset over rule ids
    pq: int  # bitset over packet ids; bits are never cleared
    fq: frozenset  # {(packet id, ports)}
    cq: tuple  # frozenset of (op, rule id) or Barrier


class ControllerEnv(NamedTuple):
    cs: tuple
    rq: frozenset  # {(switch index, packet id)}
    brq: frozenset  # {(switch index, xid)}


class SystemState(NamedTuple):
    hosts: tuple  # rcvq bitset per host
    switches: tuple  # SwitchState per switch
    ctrl: ControllerEnv


EMPTY_SWITCH = SwitchState(0, 0, frozenset(), ())


def bits(x: int):
    """Indices of the set bits of ``x``, ascending."""
    while x:
        low = x & -x
        yield low.bit_length() - 1
        x ^= low


class CsCodec:
    """Fixed-width encoding of a controller state given as a tuple of ints."""

    def __init__(self, widths):
        self.widths = tuple(widths)
        self.width = sum(self.widths)

    def encode(self, cs) -> int:
        code, shift = 0, 0
        for w, v in zip(self.widths, cs):
            if not 0 <= v < (1 << w):
                raise ModelError(f"controller state component {v} exceeds {w} bits")
            code |= v << shift
            shift += w
        return code

    def decode(self, code: int) -> tuple:
        out = []
        for w in self.widths:
            out.append(code & ((1 << w) - 1))
            code >>= w
        return tuple(out)


# --- bit packing -----------------------------------------------------------

_BARRIER_TAG = 0x80000000


def ports_mask(ports) -> int:
    m = 0
    for p in ports:
        if p == DROP:
            m |= 1 << 15
        elif 0 <= p <= MAX_PORT:
            m |= 1 << p
        else:
            raise ModelError(f"port {p} cannot be packed")
    return m


def mask_ports(m) -> tuple:
    return tuple(DROP if b == 15 else b for b in bits(m))


def _put_bits(out: bytearray, x: int):
    n = (x.bit_length() + 31) >> 5
    out += struct.pack("<I", n)
    if n:
        out += x.to_bytes(4 * n, "little")


def _put_words(out: bytearray, words):
    out += struct.pack(f"<I{len(words)}I", len(words), *words)


def _pack_switch(sw: SwitchState) -> bytes:
    out = bytearray()
    _put_bits(out, sw.ft)
    _put_bits(out, sw.pq)
    _put_words(out, sorted((pid << 16) | ports_mask(ports) for pid, ports in sw.fq))
    words = []
    for item in sw.cq:
        if isinstance(item, Barrier):
            words.append(_BARRIER_TAG | item.xid)
        else:
            words.append(len(item))
            words.extend(sorted((op << 31) | rid for op, rid in item))
    _put_words(out, words)
    return bytes(out)


def _pack_ctrl(ctrl: ControllerEnv, codec: CsCodec) -> bytes:
    out = bytearray()
    _put_bits(out, codec.encode(ctrl.cs))
    _put_words(out, sorted((sw << 16) | pid for sw, pid in ctrl.rq))
    _put_words(out, sorted((sw << 24) | xid for sw, xid in ctrl.brq))
    return bytes(out)


def _pack_host(rcvq: int) -> bytes:
    out = bytearray()
    _put_bits(out, rcvq)
    return bytes(out)


def pack(s: SystemState, codec: CsCodec) -> bytes:
    """Canonical little-endian 32-bit word encoding of a state."""
    parts = [_pack_host(h) for h in s.hosts]
    parts.extend(_pack_switch(sw) for sw in s.switches)
    parts.append(_pack_ctrl(s.ctrl, codec))
    return b"".join(parts)


class Packer:
    """``pack`` with memoised per-component encodings. Switch and
    controller components recur across many states, so most of a state's
    words come out of the cache."""

    def __init__(self, codec: CsCodec, limit=1 << 18):
        self.codec = codec
        self.limit = limit
        self._sw = {}
        self._ctrl = {}
        self._host = {}

    def __call__(self, s: SystemState) -> bytes:
        parts = []
        cache = self._host
        for h in s.hosts:
            b = cache.get(h)
            if b is None:
                b = _pack_host(h)
                if len(cache) < self.limit:
                    cache[h] = b
            parts.append(b)
        cache = self._sw
        for sw in s.switches:
            b = cache.get(sw)
            if b is None:
                b = _pack_switch(sw)
                if len(cache) < self.limit:
                    cache[sw] = b
            parts.append(b)
        b = self._ctrl.get(s.ctrl)
        if b is None:
            b = _pack_ctrl(s.ctrl, self.codec)
            if len(self._ctrl) < self.limit:
                self._ctrl[s.ctrl] = b
        parts.append(b)
        return b"".join(parts)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def word(self):
        (w,) = struct.unpack_from("<I", self.data, self.pos)
        self.pos += 4
        return w

    def words(self):
        n = self.word()
        ws = struct.unpack_from(f"<{n}I", self.data, self.pos)
        self.pos += 4 * n
        return ws

    def bitset(self):
        n = self.word()
        x = int.from_bytes(self.data[self.pos:self.pos + 4 * n], "little")
        self.pos += 4 * n
        return x


def unpack(data: bytes, codec: CsCodec, n_hosts: int, n_switches: int) -> SystemState:
    r = _Reader(data)
    hosts = tuple(r.bitset() for _ in range(n_hosts))
    switches = []
    for _ in range(n_switches):
        ft = r.bitset()
        pq = r.bitset()
        fq = frozenset((w >> 16, mask_ports(w & 0xFFFF)) for w in r.words())
        ws = r.words()
        cq, i = [], 0
        while i < len(ws):
            w = ws[i]
            if w & _BARRIER_TAG:
                cq.append(Barrier(w & ~_BARRIER_TAG))
                i += 1
            else:
                cq.append(frozenset((x >> 31, x & 0x7FFFFFFF) for x in ws[i + 1:i + 1 + w]))
                i += 1 + w
        switches.append(SwitchState(ft, pq, fq, tuple(cq)))
    cs = codec.decode(r.bitset())
    rq = frozenset((w >> 16, w & 0xFFFF) for w in r.words())
    brq = frozenset((w >> 24, w & 0xFFFFFF) for w in r.words())
    if r.pos != len(data):
        raise ModelError("trailing bytes in packed state")
    return SystemState(hosts, tuple(switches), ControllerEnv(cs, rq, brq))


def state_fingerprint(packed: bytes) -> int:
    """Stable 64-bit hash of a packed state (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.blake2b(packed, digest_size=8).digest(), "little")


def dump_packed(packed: bytes, schema_hash: int) -> bytes:
    """Diagnostic dump: schema hash, word count, then the words."""
    return struct.pack("<QI", schema_hash, len(packed) // 4) + packed


def load_packed(blob: bytes, schema_hash: int | None = None) -> bytes:
    h, n = struct.unpack_from("<QI", blob, 0)
    if schema_hash is not None and h != schema_hash:
        raise ModelError("packed dump was written for a different schema")
    body = blob[12:]
    if len(body) != 4 * n:
        raise ModelError("packed dump is truncated")
    return body
