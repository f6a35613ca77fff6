"""Labeled seed derivation.

Every randomized stage draws its seed from (master, labels...) through a
cryptographic hash, so adding or reordering stages never shifts the
random stream of an unrelated stage.
"""

import hashlib


def derive_seed(master, *labels):
    """Derive a 64-bit seed from a master seed and a label path.

    Labels are stringified, so ints and strings can be mixed freely:
    derive_seed(17, "tvm", 42).
    """
    parts = [str(int(master))] + [str(lab) for lab in labels]
    digest = hashlib.sha256("|".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
