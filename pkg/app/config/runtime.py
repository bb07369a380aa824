from typing import Any, Dict, Optional
import time

import numpy as np
import torch
from loguru import logger

from .settings import settings


class RuntimeManager:
    """Owns process-wide torch state and the derivation of private RNG streams."""

    def __init__(self):
        self._is_initialized = False
        self._initialized_at: Optional[float] = None

    def initialize(self, num_threads: Optional[int] = None):
        """Apply thread settings once per process."""
        if self._is_initialized:
            return
        threads = settings.torch_num_threads if num_threads is None else num_threads
        if threads > 0:
            torch.set_num_threads(threads)
        self._is_initialized = True
        self._initialized_at = time.time()
        logger.debug(f"Torch runtime initialized with {torch.get_num_threads()} threads")

    @staticmethod
    def derive_seed(master_seed: int, *keys: int) -> int:
        """Derive an independent 63-bit seed from a master seed and integer keys.

        The same (master, keys) tuple always yields the same stream, regardless of the
        order in which sequences or frames are processed.
        """
        entropy = [int(master_seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) & 0xFFFFFFFFFFFFFFFF for k in keys]
        state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
        return int((int(state[0]) << 31) ^ int(state[1])) & 0x7FFFFFFFFFFFFFFF

    @staticmethod
    def generator(seed: int) -> torch.Generator:
        gen = torch.Generator(device="cpu")
        gen.manual_seed(int(seed) & 0x7FFFFFFFFFFFFFFF)
        return gen

    def stream(self, master_seed: int, *keys: int) -> torch.Generator:
        return self.generator(self.derive_seed(master_seed, *keys))

    def runtime_info(self) -> Dict[str, Any]:
        """Report the torch runtime the engine is using."""
        return {
            "status": "initialized" if self._is_initialized else "pending",
            "torch_version": torch.__version__,
            "num_threads": torch.get_num_threads(),
            "default_dtype": str(torch.get_default_dtype()),
            "uptime_s": round(time.time() - self._initialized_at, 3) if self._initialized_at else 0.0,
        }

    def close(self):
        self._is_initialized = False
        self._initialized_at = None


# Global runtime manager instance
runtime_manager = RuntimeManager()


def derive_seed(master_seed: int, *keys: int) -> int:
    return runtime_manager.derive_seed(master_seed, *keys)


def make_generator(seed: int) -> torch.Generator:
    return runtime_manager.generator(seed)
