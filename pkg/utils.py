"""
Utility Functions

Helper functions shared by the pose adaptation modules: directories,
file sizes, seeding, worker counts and SHA-256 checksums.
"""

import os
import random

import numpy as np
import torch
from Crypto.Hash import SHA256


THREADS_ENV_VAR = "POSEADAPT_THREADS"


def ensure_directory(path: str):
    """
    Ensure a directory exists, create if it doesn't.

    Args:
        path: Directory path

    Raises:
        OSError: If the directory cannot be created
    """
    os.makedirs(path, exist_ok=True)


def get_file_size(file_path: str) -> int:
    """
    Get file size in bytes.

    Args:
        file_path: Path to file

    Returns:
        File size in bytes
    """
    return os.path.getsize(file_path)


def format_bytes(bytes_count: int) -> str:
    """
    Format bytes as human-readable string.

    Args:
        bytes_count: Number of bytes

    Returns:
        Formatted string (e.g., "1.5 MB")
    """
    for unit in ['B', 'KB', 'MB', 'GB']:
        if bytes_count < 1024.0:
            return f"{bytes_count:.2f} {unit}"
        bytes_count /= 1024.0
    return f"{bytes_count:.2f} TB"


def seed_everything(seed: int):
    """
    Seed python, numpy and torch global generators.

    Args:
        seed: Integer seed
    """
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


def worker_count(requested: int = 0) -> int:
    """
    Number of worker processes/threads to use.

    A positive `requested` wins; otherwise POSEADAPT_THREADS is read, and
    without it a single worker is used.

    Args:
        requested: Explicit worker count (0 = use the environment)

    Returns:
        Worker count, at least 1

    Raises:
        ValueError: If POSEADAPT_THREADS is not a positive integer
    """
    if requested > 0:
        return requested
    raw = os.environ.get(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}")
    if value < 1:
        raise ValueError(f"{THREADS_ENV_VAR} must be >= 1, got {value}")
    return value


def sha256_files(paths) -> str:
    """
    SHA-256 over the contents of several files, in the given order.

    File names are hashed alongside contents so renames change the digest.

    Args:
        paths: Iterable of file paths

    Returns:
        Hex digest string
    """
    digest = SHA256.new()
    for path in paths:
        digest.update(os.path.basename(path).encode('utf-8'))
        with open(path, 'rb') as f:
            digest.update(f.read())
    return digest.hexdigest()


def sha256_bytes(data: bytes) -> str:
    """SHA-256 hex digest of a byte string."""
    return SHA256.new(data).hexdigest()
