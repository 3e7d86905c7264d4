"""Sub-seed derivation.

Every random stream is keyed by the root seed plus a label path, hashed with
SHA-256 and truncated to 63 bits.  Adding a consumer never shifts the
stream another consumer sees.
"""
import hashlib


def derive_seed(root, *labels):
    text = ":".join([str(int(root))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1
