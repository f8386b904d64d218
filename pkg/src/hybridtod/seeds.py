import hashlib


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from any sequence of printable parts."""
    key = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")
