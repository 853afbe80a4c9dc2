"""Named child seeds derived from one master seed.

child = first 8 bytes (little-endian) of BLAKE2b("<master>/<label>"), so each
stream (data, env, init, policy, ...) is independent and reproducible.
"""

import hashlib


def derive_seed(master: int, label: str) -> int:
    digest = hashlib.blake2b(f"{int(master)}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
