import os
import json
import hashlib

from typing import Any, Optional

import numpy as np

from tools.logger import resolve_log_dir


def clear_files_in_directory(directory: Optional[str] = None) -> None:
    """
    Truncate every file in the logs directory.

    Args:
        directory (str, optional): Directory to clear. Defaults to the
            active log directory (see tools.logger.resolve_log_dir).

    Raises:
        FileNotFoundError: If the directory does not exist.
    """
    directory = directory or resolve_log_dir()
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"Logs directory does not exist: {directory}")

    for filename in sorted(os.listdir(directory)):
        file_path = os.path.join(directory, filename)
        if os.path.isfile(file_path):
            try:
                with open(file_path, "w", encoding="utf-8"):
                    pass
            except OSError as e:
                print(f"Failed to clear {file_path}: {e}")


def stable_hash(payload: Any) -> str:
    """
    SHA-256 hex digest of the canonical JSON encoding of a payload
    (sorted keys, no whitespace). Used for config hashes in run manifests.
    """
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def seed_stream(master_seed: int, *keys: int) -> np.random.Generator:
    """
    Independent generator for one Monte-Carlo work item.

    The stream depends only on (master_seed, keys), never on scheduling,
    so results are identical for any worker count.
    """
    entropy = [int(master_seed)] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def centered_fraction(x: np.ndarray) -> np.ndarray:
    """x − ⌊x + 1/2⌋, i.e. the fractional part mapped to [−1/2, 1/2)."""
    x = np.asarray(x, dtype=float)
    return x - np.floor(x + 0.5)
