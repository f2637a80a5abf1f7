import numpy as np


def derive_seed(*keys) -> int:
    """Deterministic 63-bit seed from a tuple of non-negative integers."""
    ss = np.random.SeedSequence([int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
