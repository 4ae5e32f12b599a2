"""
Versioned binary checkpoints

Layout (all integers little-endian):

    b"CKAN" | u32 version | 32-byte sha256 config hash
    u32 metadata length | metadata (UTF-8 JSON)
    blocks: u64 element count | count float64 values

Blocks follow the section order listed in the metadata: generator
parameters, discriminator parameters, then the Adam first and second
moments of the generator and of the discriminator. Within a section the
order is Module.named_parameters().
"""
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

import config
from core.exceptions import CheckpointError, CheckpointIncompatibleError
from core.models.settings import CkanSettings, GeneratorConfig, config_hash
from core.nn.module import Module
from core.nn.optim import AdamState
from core.utils.logger import get_logger

logger = get_logger(__name__)

HASH_BYTES = 32


@dataclass(eq=False)
class Checkpoint:
    """Model parameters, optimizer moments and training progress"""
    generator_config: GeneratorConfig
    ckan: CkanSettings
    generator: List[np.ndarray]
    stage: str = "pretrain"
    epoch: int = 0
    stage_start_epoch: int = 0
    best: Dict[str, Optional[float]] = field(default_factory=dict)
    discriminator: Optional[List[np.ndarray]] = None
    adam_g: Optional[AdamState] = None
    adam_d: Optional[AdamState] = None
    extra: Dict = field(default_factory=dict)
    source: Optional[str] = None

    @property
    def config_hash(self) -> bytes:
        return config_hash(self.generator_config, self.ckan)

    def sections(self) -> List[Tuple[str, List[np.ndarray]]]:
        result = [("generator", self.generator)]
        if self.discriminator is not None:
            result.append(("discriminator", self.discriminator))
        if self.adam_g is not None:
            result += [("adam_g.m", self.adam_g.m), ("adam_g.v", self.adam_g.v)]
        if self.adam_d is not None:
            result += [("adam_d.m", self.adam_d.m), ("adam_d.v", self.adam_d.v)]
        return result


def restore_parameters(module: Module, arrays: List[np.ndarray], label: str) -> None:
    """Copy arrays into the module's parameters, checking count and shapes"""
    params = module.parameters()
    if len(params) != len(arrays):
        raise CheckpointIncompatibleError(
            f"{label}: checkpoint has {len(arrays)} blocks, model has {len(params)} parameters"
        )
    for (name, param), array in zip(module.named_parameters(), arrays):
        if param.shape != array.shape:
            raise CheckpointIncompatibleError(
                f"{label}.{name}: checkpoint shape {array.shape} != model shape {param.shape}"
            )
        param.data[...] = array


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.data):
            raise CheckpointError(
                f"Checkpoint truncated: needed {count} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


class CheckpointService:
    """Checkpoint serialization"""

    @staticmethod
    def save(path, ckpt: Checkpoint) -> Path:
        """
        Write a checkpoint atomically (temporary file, then rename)

        Args:
            path: Destination file
            ckpt: Checkpoint to write

        Returns:
            The destination path
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        sections = ckpt.sections()
        metadata = {
            "generator_config": ckpt.generator_config.model_dump(mode="json"),
            "ckan": ckpt.ckan.model_dump(mode="json"),
            "stage": ckpt.stage,
            "epoch": ckpt.epoch,
            "stage_start_epoch": ckpt.stage_start_epoch,
            "best": ckpt.best,
            "adam_g_step": ckpt.adam_g.step if ckpt.adam_g else None,
            "adam_d_step": ckpt.adam_d.step if ckpt.adam_d else None,
            "sections": [
                {"name": name, "shapes": [list(a.shape) for a in arrays]}
                for name, arrays in sections
            ],
            "extra": ckpt.extra,
        }
        meta_bytes = json.dumps(metadata, sort_keys=True).encode("utf-8")

        parts = [
            config.CHECKPOINT_MAGIC,
            struct.pack("<I", config.CHECKPOINT_VERSION),
            ckpt.config_hash,
            struct.pack("<I", len(meta_bytes)),
            meta_bytes,
        ]
        for _, arrays in sections:
            for array in arrays:
                flat = np.ascontiguousarray(array, dtype="<f8").reshape(-1)
                parts.append(struct.pack("<Q", flat.size))
                parts.append(flat.tobytes())

        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "wb") as handle:
            handle.write(b"".join(parts))
        os.replace(tmp, path)
        logger.info(f"Checkpoint saved: {path} (stage {ckpt.stage}, epoch {ckpt.epoch})")
        return path

    @staticmethod
    def load(path, expected_hash: Optional[bytes] = None) -> Checkpoint:
        """
        Read a checkpoint

        Args:
            path: Checkpoint file
            expected_hash: Config hash the caller's model needs, if any

        Returns:
            The decoded checkpoint

        Raises:
            CheckpointError: missing, truncated or malformed file
            CheckpointIncompatibleError: version or config hash mismatch
        """
        path = Path(path)
        if not path.is_file():
            raise CheckpointError(f"Checkpoint not found: {path}")
        reader = _Reader(path.read_bytes())

        magic = reader.take(len(config.CHECKPOINT_MAGIC))
        if magic != config.CHECKPOINT_MAGIC:
            raise CheckpointError(f"Not a checkpoint (magic {magic!r}): {path}")
        (version,) = reader.unpack("<I")
        if version != config.CHECKPOINT_VERSION:
            raise CheckpointIncompatibleError(
                f"Checkpoint version {version} is not supported (expected {config.CHECKPOINT_VERSION})"
            )
        stored_hash = reader.take(HASH_BYTES)
        (meta_len,) = reader.unpack("<I")
        try:
            metadata = json.loads(reader.take(meta_len).decode("utf-8"))
            generator_config = GeneratorConfig(**metadata["generator_config"])
            ckan = CkanSettings(**metadata["ckan"])
        except (ValueError, KeyError, TypeError) as e:
            raise CheckpointError(f"Malformed checkpoint metadata in {path}: {e}") from e

        if config_hash(generator_config, ckan) != stored_hash:
            raise CheckpointIncompatibleError(f"Config hash does not match metadata in {path}")
        if expected_hash is not None and stored_hash != expected_hash:
            raise CheckpointIncompatibleError(
                f"Checkpoint {path} was written for a different generator configuration"
            )

        blocks: Dict[str, List[np.ndarray]] = {}
        for section in metadata["sections"]:
            arrays = []
            for shape in section["shapes"]:
                (count,) = reader.unpack("<Q")
                expected = int(np.prod(shape)) if shape else 1
                if count != expected:
                    raise CheckpointError(
                        f"Block of {section['name']} has {count} values, expected {expected}"
                    )
                values = np.frombuffer(reader.take(8 * count), dtype="<f8")
                arrays.append(values.astype(np.float64).reshape(shape))
            blocks[section["name"]] = arrays
        if reader.pos != len(reader.data):
            raise CheckpointError(f"Trailing bytes after the last block in {path}")

        def adam(prefix: str, step_key: str) -> Optional[AdamState]:
            if f"{prefix}.m" not in blocks:
                return None
            return AdamState(m=blocks[f"{prefix}.m"], v=blocks[f"{prefix}.v"],
                             step=int(metadata[step_key]))

        return Checkpoint(
            generator_config=generator_config,
            ckan=ckan,
            generator=blocks.get("generator", []),
            stage=metadata["stage"],
            epoch=int(metadata["epoch"]),
            stage_start_epoch=int(metadata.get("stage_start_epoch", 0)),
            best=metadata.get("best", {}),
            discriminator=blocks.get("discriminator"),
            adam_g=adam("adam_g", "adam_g_step"),
            adam_d=adam("adam_d", "adam_d_step"),
            extra=metadata.get("extra", {}),
            source=str(path),
        )
