"""Versioned checkpoint format and the multi-task classifier bank.

A checkpoint is a text manifest followed by raw parameter data:

    fundusvit-checkpoint v1
    model.<field> = <value>        (architecture)
    prep.<field> = <value>         (preprocessing the model was trained with)
    task = <glaucoma|feature1..feature10>
    tensor <name> <d0>x<d1>... @ <byte offset>
    ---
    <little-endian float32 arrays, manifest order>

Offsets are relative to the first byte after the ``---`` line. Round-trips
are bit-exact for float32 models.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .dataset import PreprocessOptions
from .model import DualHeadViT, ModelConfig

MAGIC = "fundusvit-checkpoint v1"
TASKS = ["glaucoma", *[f"feature{k}" for k in range(1, 11)]]


class IncompatibleCheckpointError(ValueError):
    """Checkpoint contents do not match the requested configuration."""


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    return repr(value) if isinstance(value, float) else str(value)


def _config_lines(config: ModelConfig, prep: PreprocessOptions, task: str) -> list[str]:
    lines = [f"model.{f.name} = {_format_value(getattr(config, f.name))}"
             for f in fields(ModelConfig)]
    lines += [f"prep.{f.name} = {_format_value(getattr(prep, f.name))}"
              for f in fields(PreprocessOptions)]
    lines.append(f"task = {task}")
    return lines


def _parse_scalar(text: str):
    if text == "true":
        return True
    if text == "false":
        return False
    if text == "none":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def save_checkpoint(path: str | Path, model: DualHeadViT,
                    prep: PreprocessOptions, task: str) -> None:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    header = [MAGIC]
    header += _config_lines(model.config, prep, task)
    blobs: list[bytes] = []
    offset = 0
    for name, tensor in model.named_parameters():
        data = np.ascontiguousarray(tensor.data, dtype="<f4")
        dims = "x".join(str(d) for d in data.shape)
        header.append(f"tensor {name} {dims} @ {offset}")
        blobs.append(data.tobytes())
        offset += len(blobs[-1])
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n---\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[DualHeadViT, PreprocessOptions, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    sep = b"\n---\n"
    cut = raw.find(sep)
    if cut < 0:
        raise IncompatibleCheckpointError(f"{path}: missing header terminator")
    header = raw[:cut].decode("ascii").splitlines()
    binary = raw[cut + len(sep):]
    if not header or header[0] != MAGIC:
        raise IncompatibleCheckpointError(f"{path}: bad magic line "
                                          f"{header[0] if header else ''!r}")
    model_kwargs: dict = {}
    prep_kwargs: dict = {}
    task = None
    tensors: list[tuple[str, tuple[int, ...], int]] = []
    for line in header[1:]:
        if line.startswith("tensor "):
            _, name, dims, at, off = line.split(" ")
            if at != "@":
                raise IncompatibleCheckpointError(f"{path}: malformed tensor line {line!r}")
            shape = tuple(int(d) for d in dims.split("x"))
            tensors.append((name, shape, int(off)))
        else:
            key, _, value = line.partition(" = ")
            if key.startswith("model."):
                model_kwargs[key[6:]] = _parse_scalar(value)
            elif key.startswith("prep."):
                prep_kwargs[key[5:]] = _parse_scalar(value)
            elif key == "task":
                task = value
            else:
                raise IncompatibleCheckpointError(f"{path}: unknown header line {line!r}")
    if task not in TASKS:
        raise IncompatibleCheckpointError(f"{path}: missing or unknown task {task!r}")
    config = ModelConfig(**model_kwargs)
    prep = PreprocessOptions(**prep_kwargs)
    model = DualHeadViT(config, seed=0, dtype=np.float32)
    expected = dict(DualHeadViT.parameter_shapes(config))
    for name, shape, off in tensors:
        if name not in expected or expected[name] != shape:
            raise IncompatibleCheckpointError(
                f"{path}: tensor {name} {shape} does not match the configured "
                f"architecture")
        count = int(np.prod(shape))
        end = off + 4 * count
        if end > len(binary):
            raise IncompatibleCheckpointError(f"{path}: tensor {name} data out of range")
        arr = np.frombuffer(binary, dtype="<f4", count=count, offset=off)
        model.params[name].data = arr.reshape(shape).copy()
    if len(tensors) != len(expected):
        raise IncompatibleCheckpointError(
            f"{path}: expected {len(expected)} tensors, found {len(tensors)}")
    return model, prep, task


@dataclass
class ClassifierBank:
    """Independently trained per-task models sharing one architecture."""

    models: dict[str, DualHeadViT]
    prep: PreprocessOptions
    config: ModelConfig
    skipped: dict[str, str]

    @property
    def glaucoma(self) -> DualHeadViT:
        return self.models["glaucoma"]


def load_bank(path: str | Path) -> ClassifierBank:
    """Load a bank from a single checkpoint file or a directory of
    ``<task>.ckpt`` files; every member must share one architecture."""
    path = Path(path)
    models: dict[str, DualHeadViT] = {}
    prep = config = None
    if path.is_file():
        candidates = [path]
    elif path.is_dir():
        candidates = sorted(path.glob("*.ckpt"))
        if not candidates:
            raise FileNotFoundError(f"no *.ckpt files under {path}")
    else:
        raise FileNotFoundError(f"checkpoint path not found: {path}")
    for ckpt in candidates:
        model, ckpt_prep, task = load_checkpoint(ckpt)
        if task in models:
            raise IncompatibleCheckpointError(f"{ckpt}: duplicate task {task!r}")
        if config is None:
            prep, config = ckpt_prep, model.config
        elif model.config != config or ckpt_prep != prep:
            raise IncompatibleCheckpointError(
                f"{ckpt}: configuration differs from the rest of the bank")
        models[task] = model
    if "glaucoma" not in models:
        raise IncompatibleCheckpointError(f"{path}: bank has no glaucoma classifier")
    return ClassifierBank(models=models, prep=prep, config=config, skipped={})
