"""EVM bytecode decoding and normalization for similarity analysis.

The pipeline is ``decode_hex`` -> ``strip_metadata`` -> ``disassemble``; ``normalize``
composes the three. Disassembly is a linear sweep that drops PUSH immediates and keeps
the PUSH mnemonics themselves.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path

INVALID = "INVALID"

_NAMED = {
    0x00: "STOP", 0x01: "ADD", 0x02: "MUL", 0x03: "SUB", 0x04: "DIV", 0x05: "SDIV",
    0x06: "MOD", 0x07: "SMOD", 0x08: "ADDMOD", 0x09: "MULMOD", 0x0A: "EXP",
    0x0B: "SIGNEXTEND",
    0x10: "LT", 0x11: "GT", 0x12: "SLT", 0x13: "SGT", 0x14: "EQ", 0x15: "ISZERO",
    0x16: "AND", 0x17: "OR", 0x18: "XOR", 0x19: "NOT", 0x1A: "BYTE", 0x1B: "SHL",
    0x1C: "SHR", 0x1D: "SAR",
    0x20: "SHA3",
    0x30: "ADDRESS", 0x31: "BALANCE", 0x32: "ORIGIN", 0x33: "CALLER", 0x34: "CALLVALUE",
    0x35: "CALLDATALOAD", 0x36: "CALLDATASIZE", 0x37: "CALLDATACOPY", 0x38: "CODESIZE",
    0x39: "CODECOPY", 0x3A: "GASPRICE", 0x3B: "EXTCODESIZE", 0x3C: "EXTCODECOPY",
    0x3D: "RETURNDATASIZE", 0x3E: "RETURNDATACOPY", 0x3F: "EXTCODEHASH",
    0x40: "BLOCKHASH", 0x41: "COINBASE", 0x42: "TIMESTAMP", 0x43: "NUMBER",
    0x44: "DIFFICULTY", 0x45: "GASLIMIT", 0x46: "CHAINID", 0x47: "SELFBALANCE",
    0x48: "BASEFEE",
    0x50: "POP", 0x51: "MLOAD", 0x52: "MSTORE", 0x53: "MSTORE8", 0x54: "SLOAD",
    0x55: "SSTORE", 0x56: "JUMP", 0x57: "JUMPI", 0x58: "PC", 0x59: "MSIZE", 0x5A: "GAS",
    0x5B: "JUMPDEST",
    0xF0: "CREATE", 0xF1: "CALL", 0xF2: "CALLCODE", 0xF3: "RETURN", 0xF4: "DELEGATECALL",
    0xF5: "CREATE2", 0xFA: "STATICCALL", 0xFD: "REVERT", 0xFE: "INVALID",
    0xFF: "SELFDESTRUCT",
}


def _build_table() -> tuple[tuple[str, ...], tuple[int, ...], frozenset[int]]:
    names = [INVALID] * 256
    widths = [0] * 256
    for code, name in _NAMED.items():
        names[code] = name
    for i in range(32):
        names[0x60 + i] = f"PUSH{i + 1}"
        widths[0x60 + i] = i + 1
    for i in range(16):
        names[0x80 + i] = f"DUP{i + 1}"
        names[0x90 + i] = f"SWAP{i + 1}"
    for i in range(5):
        names[0xA0 + i] = f"LOG{i}"
    defined = frozenset(_NAMED) | frozenset(range(0x60, 0xA5))
    return tuple(names), tuple(widths), defined


#: mnemonic per byte value, immediate width per byte value, set of defined byte values
MNEMONICS, PUSH_WIDTHS, DEFINED = _build_table()


class MalformedHex(ValueError):
    pass


@dataclass(frozen=True)
class RawBytecode:
    """Deployed runtime code of one contract.

    ``stripped_metadata_len`` is non-zero once a compiler metadata trailer has been
    removed; it makes :func:`strip_metadata` idempotent.
    """

    bytes: bytes
    source_id: str = ""
    stripped_metadata_len: int = 0

    def __len__(self) -> int:
        return len(self.bytes)


@dataclass(frozen=True)
class OpcodeStream:
    opcodes: tuple[str, ...]
    stripped_metadata_len: int = 0
    invalid_count: int = 0
    immediate_len: int = 0
    source_id: str = ""

    def __len__(self) -> int:
        return len(self.opcodes)

    @property
    def input_len(self) -> int:
        """Length of the bytecode before metadata stripping."""
        return len(self.opcodes) + self.immediate_len + self.stripped_metadata_len


_HEXDIGITS = frozenset(string.hexdigits)


def decode_hex(text: str, source_id: str = "") -> RawBytecode:
    text = text.strip()
    if text[:2] in ("0x", "0X"):
        text = text[2:]
    if len(text) % 2:
        raise MalformedHex(f"odd-length hex string ({len(text)} digits)")
    bad = next((c for c in text if c not in _HEXDIGITS), None)
    if bad is not None:
        raise MalformedHex(f"invalid hex character {bad!r}")
    return RawBytecode(bytes.fromhex(text), source_id)


def _cbor_skip(data: bytes, pos: int, depth: int = 0) -> int:
    """Return the offset just past the CBOR item starting at ``pos``.

    Only definite-length items are accepted. Raises ``ValueError`` on anything else.
    """
    if depth > 16 or pos >= len(data):
        raise ValueError("truncated or too deep")
    initial = data[pos]
    major, info = initial >> 5, initial & 0x1F
    pos += 1
    if info < 24:
        arg = info
    elif info in (24, 25, 26, 27):
        n = 1 << (info - 24)
        if pos + n > len(data):
            raise ValueError("truncated argument")
        arg = int.from_bytes(data[pos:pos + n], "big")
        pos += n
    else:
        raise ValueError("indefinite or reserved length")
    if major in (0, 1, 7):
        return pos
    if major in (2, 3):
        if pos + arg > len(data):
            raise ValueError("string overruns data")
        return pos + arg
    if major == 4:
        for _ in range(arg):
            pos = _cbor_skip(data, pos, depth + 1)
        return pos
    if major == 5:
        for _ in range(2 * arg):
            pos = _cbor_skip(data, pos, depth + 1)
        return pos
    # major 6: tag followed by one item
    return _cbor_skip(data, pos, depth + 1)


def metadata_trailer_len(code: bytes) -> int:
    """Length of a well-formed trailing CBOR metadata map plus its 2-byte length suffix.

    Returns 0 when the tail is not such a trailer.
    """
    if len(code) < 2:
        return 0
    declared = int.from_bytes(code[-2:], "big")
    if declared == 0 or declared + 2 > len(code):
        return 0
    blob = code[-2 - declared:-2]
    if blob[0] >> 5 != 5:
        return 0
    try:
        end = _cbor_skip(blob, 0)
    except ValueError:
        return 0
    return declared + 2 if end == declared else 0


def strip_metadata(code: RawBytecode) -> RawBytecode:
    if code.stripped_metadata_len:
        return code
    n = metadata_trailer_len(code.bytes)
    if not n:
        return code
    return RawBytecode(code.bytes[:-n], code.source_id, n)


def disassemble(code: RawBytecode) -> OpcodeStream:
    data = code.bytes
    ops: list[str] = []
    invalid = 0
    immediates = 0
    i, end = 0, len(data)
    while i < end:
        b = data[i]
        ops.append(MNEMONICS[b])
        if b not in DEFINED:
            invalid += 1
        width = PUSH_WIDTHS[b]
        if width:
            # truncated immediates at end-of-code consume whatever is left
            consumed = min(width, end - i - 1)
            immediates += consumed
            i += 1 + consumed
        else:
            i += 1
    return OpcodeStream(tuple(ops), code.stripped_metadata_len, invalid, immediates, code.source_id)


def normalize(code: RawBytecode) -> OpcodeStream:
    """Strip the metadata trailer, then disassemble."""
    return disassemble(strip_metadata(code))


def load_bytecode_file(path, source_id: str | None = None) -> RawBytecode:
    """Read one contract from a hex text file. Whitespace and newlines are ignored."""
    path = Path(path)
    text = "".join(path.read_text().split())
    return decode_hex(text, source_id if source_id is not None else path.stem)
