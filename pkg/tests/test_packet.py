"""Wire format of the 41-byte request packet."""

import random

import pytest

from pgaslite import PACKET_BYTES, decode_packet, encode_packet
from pgaslite.errors import ProtocolError
from pgaslite.rma import Packet

# Hand-checked little-endian frames (dest u64, index u32, origin_offset u64,
# target_offset u64, data_size u64, segid u32, is_shmem u8).
GOLDEN = [
    (Packet(2, 1, 64, 128, 4096, 1, 0),
     "02000000000000000100000040000000000000008000000000000000"
     "00100000000000000100000000"),
    (Packet(7, 0, 0, 0, 1, 0, 1),
     "07000000000000000000000000000000000000000000000000000000"
     "01000000000000000000000001"),
    (Packet(2**64 - 1, 2**32 - 1, 2**64 - 1, 2**64 - 1, 2**64 - 1,
            2**32 - 1, 1),
     "ffffffffffffffffffffffffffffffffffffffffffffffffffffffff"
     "ffffffffffffffffffffffff01"),
]


def test_packet_is_41_bytes():
    assert PACKET_BYTES == 41


def test_golden_vectors():
    for pkt, hexed in GOLDEN:
        frame = encode_packet(pkt)
        assert frame == bytes.fromhex(hexed)
        assert decode_packet(frame) == pkt


def test_randomized_round_trips():
    rng = random.Random(20240901)
    for _ in range(1000):
        pkt = Packet(dest=rng.randrange(2**64),
                     index=rng.randrange(2**32),
                     origin_offset=rng.randrange(2**64),
                     target_offset=rng.randrange(2**64),
                     data_size=rng.randrange(2**64),
                     segid=rng.randrange(2**32),
                     is_shmem=rng.randrange(2))
        frame = encode_packet(pkt)
        assert len(frame) == PACKET_BYTES
        assert decode_packet(frame) == pkt


def test_decode_rejects_wrong_length():
    good = encode_packet(GOLDEN[0][0])
    with pytest.raises(ProtocolError):
        decode_packet(good[:-1])
    with pytest.raises(ProtocolError):
        decode_packet(good + b"\x00")


def test_locality_flag_must_be_boolean():
    with pytest.raises(ProtocolError):
        encode_packet(Packet(0, 0, 0, 0, 0, 0, 2))
    mangled = bytearray(encode_packet(GOLDEN[0][0]))
    mangled[-1] = 7
    with pytest.raises(ProtocolError):
        decode_packet(bytes(mangled))
