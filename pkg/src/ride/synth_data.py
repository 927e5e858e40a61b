"""Deterministic synthetic labeled-traffic generator.

Emits a classic PCAP (little-endian, microsecond timestamps, Ethernet
frames) plus a matching ground-truth CSV. Payloads are filler bytes with
per-class motifs embedded at random offsets; noise keeps the task
learnable but not trivial.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PCAP_GLOBAL_HEADER = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)

SCHEDULES = ("uniform_single", "split_halves")


@dataclass
class ClassProfile:
    """Payload recipe for one traffic class.

    schedule "uniform_single" picks one motif per flow and stamps it into
    every packet; "split_halves" stamps motifs[0] into the first half of
    the flow's packets and motifs[1] into the rest, so the class signal
    only exists at the flow level.
    """
    name: str
    motifs: list[bytes]
    schedule: str = "uniform_single"
    noise_rate: float = 0.02
    high_byte_rate: float = 0.0
    payload_len: tuple[int, int] = (40, 200)

    def __post_init__(self):
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule == "split_halves" and len(self.motifs) < 2:
            raise ValueError("split_halves needs two motifs")
        if not self.motifs:
            raise ValueError("profile needs at least one motif")


@dataclass
class TrafficSpec:
    n_flows: int
    packets_per_flow: tuple[int, int]
    class_profiles: list[ClassProfile]
    class_mix: list[float]
    seed: int = 0

    def __post_init__(self):
        if self.n_flows < 1:
            raise ValueError("n_flows must be >= 1")
        lo, hi = self.packets_per_flow
        if lo < 1 or hi < lo:
            raise ValueError("packets_per_flow must satisfy 1 <= min <= max")
        if len(self.class_mix) != len(self.class_profiles):
            raise ValueError("class_mix and class_profiles length mismatch")
        if abs(sum(self.class_mix) - 1.0) > 1e-9:
            raise ValueError("class_mix must sum to 1")


def _allocate_classes(mix: list[float], n: int) -> list[int]:
    """Exact largest-remainder allocation of n flows over the mix."""
    raw = [p * n for p in mix]
    counts = [int(x) for x in raw]
    leftover = n - sum(counts)
    order = sorted(range(len(mix)), key=lambda c: (-(raw[c] - counts[c]), c))
    for c in order[:leftover]:
        counts[c] += 1
    out = []
    for c, k in enumerate(counts):
        out.extend([c] * k)
    return out


def _make_payload(rng: np.random.Generator, profile: ClassProfile, motif: bytes) -> bytes:
    lo, hi = profile.payload_len
    length = int(rng.integers(lo, hi + 1))
    length = max(length, len(motif) + 4)
    body = rng.integers(32, 127, size=length).astype(np.uint8)
    if profile.high_byte_rate > 0:
        mask = rng.random(length) < profile.high_byte_rate
        body[mask] = rng.integers(128, 256, size=int(mask.sum())).astype(np.uint8)
    offset = int(rng.integers(0, length - len(motif) + 1))
    body[offset:offset + len(motif)] = np.frombuffer(motif, dtype=np.uint8)
    if profile.noise_rate > 0:
        mask = rng.random(length) < profile.noise_rate
        body[mask] = rng.integers(0, 256, size=int(mask.sum())).astype(np.uint8)
    return body.tobytes()


def _ipv4_checksum(header: bytes) -> int:
    total = 0
    for i in range(0, len(header), 2):
        total += (header[i] << 8) + header[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _build_frame(src_ip: bytes, dst_ip: bytes, sport: int, dport: int,
                 proto: str, payload: bytes, ip_id: int, seq: int) -> bytes:
    if proto == "TCP":
        l4 = struct.pack(">HHIIBBHHH", sport, dport, seq, 0, 0x50, 0x18, 8192, 0, 0) + payload
        proto_num = 6
    else:
        l4 = struct.pack(">HHHH", sport, dport, 8 + len(payload), 0) + payload
        proto_num = 17
    total_len = 20 + len(l4)
    ip = struct.pack(">BBHHHBBH", 0x45, 0, total_len, ip_id & 0xFFFF, 0x4000, 64, proto_num, 0)
    ip += src_ip + dst_ip
    checksum = _ipv4_checksum(ip)
    ip = ip[:10] + struct.pack(">H", checksum) + ip[12:]
    eth = bytes.fromhex("0200aabbcc01") + bytes.fromhex("0200aabbcc02") + struct.pack(">H", 0x0800)
    return eth + ip + l4


def generate(spec: TrafficSpec) -> tuple[bytes, str]:
    """Produce (pcap bytes, truth CSV text) for the spec, seeded and exact.

    Every flow gets a unique 5-tuple and one truth row; the capture parses
    back through the ingest pipeline with zero drops.
    """
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    class_of_flow = _allocate_classes(spec.class_mix, spec.n_flows)
    class_of_flow = [class_of_flow[i] for i in rng.permutation(spec.n_flows)]

    records = []  # (timestamp, frame bytes)
    truth_lines = ["src_ip,dst_ip,src_port,dst_port,protocol,label"]
    base_time = 1_700_000_000.0
    lo_pkts, hi_pkts = spec.packets_per_flow

    for i in range(spec.n_flows):
        profile = spec.class_profiles[class_of_flow[i]]
        src_ip = bytes([10, (i >> 16) & 0xFF, (i >> 8) & 0xFF, i & 0xFF])
        dst_ip = bytes([172, 16, 0, 1])
        sport = 1024 + (i % 60000)
        dport = 80
        proto = "UDP" if i % 5 == 4 else "TCP"
        n_pkts = int(rng.integers(lo_pkts, hi_pkts + 1))

        if profile.schedule == "uniform_single":
            motif = profile.motifs[int(rng.integers(len(profile.motifs)))]
            motif_of_pkt = [motif] * n_pkts
        else:
            first_half = (n_pkts + 1) // 2
            motif_of_pkt = [profile.motifs[0]] * first_half + \
                           [profile.motifs[1]] * (n_pkts - first_half)

        t = base_time + i * 0.05
        for j in range(n_pkts):
            t += 0.001 + float(rng.uniform(0.0, 0.0005))
            payload = _make_payload(rng, profile, motif_of_pkt[j])
            if j % 2 == 0:
                frame = _build_frame(src_ip, dst_ip, sport, dport, proto, payload, i * 16 + j, j)
            else:
                frame = _build_frame(dst_ip, src_ip, dport, sport, proto, payload, i * 16 + j, j)
            records.append((t, frame))

        src_str = ".".join(str(b) for b in src_ip)
        dst_str = ".".join(str(b) for b in dst_ip)
        truth_lines.append(f"{src_str},{dst_str},{sport},{dport},{proto},{profile.name}")

    chunks = [PCAP_GLOBAL_HEADER]
    for t, frame in records:
        ts_sec = int(t)
        ts_usec = int(round((t - ts_sec) * 1e6))
        if ts_usec >= 1_000_000:
            ts_sec += 1
            ts_usec -= 1_000_000
        chunks.append(struct.pack("<IIII", ts_sec, ts_usec, len(frame), len(frame)))
        chunks.append(frame)
    return b"".join(chunks), "\n".join(truth_lines) + "\n"


BENIGN_MOTIF = b"GET /index.html HTTP/1.1\r\nHost: intra.local"
ATTACK_MOTIF = b"\xde\xad\xbe\xef\x90\x90\x90\xcc\xcc\xeb\xfeownz"

# Byte-intensity motifs for the ambiguous corpus: individually they are
# easy to tell apart, but both classes emit both, so no single packet
# carries the class.
MOTIF_A = bytes(range(0x20, 0x40))
MOTIF_B = bytes(range(0xC8, 0xE8))


def default_fixture(seed: int = 7) -> TrafficSpec:
    """Desk-scale corpus: 400 flows, 70/30 benign/attack, per-packet signal."""
    return TrafficSpec(
        n_flows=400,
        packets_per_flow=(2, 8),
        class_profiles=[
            ClassProfile(name="benign", motifs=[BENIGN_MOTIF], noise_rate=0.02),
            ClassProfile(name="attack", motifs=[ATTACK_MOTIF], noise_rate=0.02,
                         high_byte_rate=0.65),
        ],
        class_mix=[0.7, 0.3],
        seed=seed,
    )


def ambiguous_fixture(seed: int = 11) -> TrafficSpec:
    """Corpus where single packets are ambiguous but flows are determined.

    Benign flows repeat one of two motifs; attack flows carry both in
    sequence, so only the combination across a flow's packets reveals the
    class.
    """
    return TrafficSpec(
        n_flows=400,
        packets_per_flow=(2, 4),
        class_profiles=[
            ClassProfile(name="benign", motifs=[MOTIF_A, MOTIF_B],
                         schedule="uniform_single", noise_rate=0.02,
                         payload_len=(40, 80)),
            ClassProfile(name="attack", motifs=[MOTIF_A, MOTIF_B],
                         schedule="split_halves", noise_rate=0.02,
                         payload_len=(40, 80)),
        ],
        class_mix=[0.5, 0.5],
        seed=seed,
    )
