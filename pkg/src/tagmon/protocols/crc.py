"""Checksums used by the supported wire formats."""

from binascii import crc_hqx


def crc_ccitt(data: bytes) -> int:
    """CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF), as used by C37.118."""
    return crc_hqx(data, 0xFFFF)


def _dnp3_table():
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xA6BC if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_DNP3_TABLE = _dnp3_table()


def crc_dnp3(data: bytes) -> int:
    """CRC-16/DNP (poly 0x3D65 reflected, final xor 0xFFFF)."""
    crc = 0
    table = _DNP3_TABLE
    for b in data:
        crc = (crc >> 8) ^ table[(crc ^ b) & 0xFF]
    return crc ^ 0xFFFF


def additive16(data: bytes) -> int:
    return sum(data) & 0xFFFF
