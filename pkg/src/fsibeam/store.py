"""Run persistence: binary checkpoints, manifests and resume.

Checkpoint layout (little endian)::

    b"FSBCKPT\\0"          8 bytes magic
    version               uint16
    header length         uint32
    header                UTF-8 JSON: scalars, array names, shapes
    array payload         float64, C order, in header order
    sha256                32 bytes over everything above

A file whose trailing digest does not match its content (including a
truncated file) raises ``ChecksumError``; failures to open or read raise
``CheckpointIOError``.
"""
from __future__ import annotations

import hashlib
import json
import os
import platform
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .solver.beam import BeamState
from .solver.config import RunConfig, dumps_toml
from .solver.coupled import ContactEvent, Sample, SimState, StepInfo, Trajectory, run
from .solver.fluid import FluidState

MAGIC = b"FSBCKPT\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_DIGEST = 32
_ARRAYS = (("fluid", "u1"), ("fluid", "u2"), ("fluid", "p"), ("fluid", "h"), ("beam", "eta"), ("beam", "eta_dot"))


class StoreError(Exception):
    pass


class CheckpointIOError(StoreError, OSError):
    pass


class ChecksumError(StoreError):
    pass


class ManifestError(StoreError):
    def __init__(self, problems: list):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ParamHashMismatch(StoreError, ValueError):
    pass


class MissingCheckpoint(StoreError, LookupError):
    pass


@dataclass(frozen=True)
class CheckpointReceipt:
    path: Path
    sha256: str
    nbytes: int
    step: int
    t: float

    def to_dict(self, root: Path | None = None) -> dict:
        name = str(self.path.relative_to(root)) if root else str(self.path)
        return {"file": name, "sha256": self.sha256, "bytes": self.nbytes, "step": self.step, "t": self.t}


def encode_state(state: SimState) -> bytes:
    header = {
        "step": int(state.step),
        "t_fluid": float(state.fluid.t),
        "t_beam": float(state.beam.t),
        "L": float(state.beam.L),
        "arrays": [],
    }
    chunks = []
    for owner, name in _ARRAYS:
        a = np.ascontiguousarray(getattr(getattr(state, owner), name), dtype="<f8")
        header["arrays"].append({"name": f"{owner}.{name}", "shape": list(a.shape)})
        chunks.append(a.tobytes(order="C"))
    head = json.dumps(header, sort_keys=True).encode()
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, len(head)) + head + b"".join(chunks)
    return body + hashlib.sha256(body).digest()


def decode_state(raw: bytes, source: str = "<bytes>") -> SimState:
    if len(raw) < _PREFIX.size + _DIGEST:
        raise ChecksumError(f"{source}: file too short to hold a checkpoint ({len(raw)} bytes)")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{source}: content hash mismatch (truncated or corrupted)")
    magic, version, n = _PREFIX.unpack_from(body)
    if magic != MAGIC:
        raise ChecksumError(f"{source}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise StoreError(f"{source}: unsupported checkpoint version {version}")
    header = json.loads(body[_PREFIX.size:_PREFIX.size + n])
    offset = _PREFIX.size + n
    arrays = {}
    for item in header["arrays"]:
        count = int(np.prod(item["shape"]))
        arrays[item["name"]] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(item["shape"])
        offset += 8 * count
    L = header["L"]
    fluid = FluidState(arrays["fluid.u1"], arrays["fluid.u2"], arrays["fluid.p"], arrays["fluid.h"],
                       header["t_fluid"], L)
    beam = BeamState(arrays["beam.eta"], arrays["beam.eta_dot"], header["t_beam"], L)
    return SimState(fluid, beam, header["step"])


def save_checkpoint(state: SimState, path) -> CheckpointReceipt:
    """Write ``state`` to ``path``; a directory target gets a content-addressed name."""
    data = encode_state(state)
    digest = hashlib.sha256(data).hexdigest()
    path = Path(path)
    if path.is_dir():
        path = path / f"state_{state.step:08d}_{digest[:12]}.ckpt"
    try:
        _atomic_write(path, data)
    except OSError as exc:
        raise CheckpointIOError(f"cannot write {path}: {exc}") from exc
    return CheckpointReceipt(path, digest, len(data), int(state.step), float(state.t))


def load_checkpoint(path) -> SimState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointIOError(f"cannot read {path}: {exc}") from exc
    return decode_state(raw, str(path))


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    config_hash: str = ""
    param_hash: str = ""
    grid_hash: str = ""
    files: dict = field(default_factory=dict)  # relative path -> sha256
    checkpoints: list = field(default_factory=list)  # {"file", "sha256", "step", "t", ...}
    wall_clock: dict = field(default_factory=dict)
    status: str = "incomplete"
    base_dir: str = ""  # resolves relative profile files in the config
    root: Path | None = None

    FILENAME = "manifest.json"

    @classmethod
    def for_config(cls, config: RunConfig, root=None) -> "RunManifest":
        return cls(config=config.to_dict(), config_hash=config.config_hash(), param_hash=config.param_hash(),
                   grid_hash=config.grid_hash(), base_dir=config.base_dir, root=Path(root) if root else None,
                   wall_clock={"python": platform.python_version(), "numpy": np.__version__})

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config, self.base_dir)

    def add_file(self, path) -> str:
        path = Path(path)
        rel = str(path.relative_to(self.root))
        self.files[rel] = file_sha256(path)
        return rel

    def add_checkpoint(self, receipt: CheckpointReceipt) -> None:
        entry = receipt.to_dict(self.root)
        self.checkpoints.append(entry)
        self.files[entry["file"]] = receipt.sha256

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "version": self.version,
            "config": self.config,
            "config_hash": self.config_hash,
            "param_hash": self.param_hash,
            "grid_hash": self.grid_hash,
            "status": self.status,
            "base_dir": self.base_dir,
            "files": dict(sorted(self.files.items())),
            "checkpoints": self.checkpoints,
            "wall_clock": self.wall_clock,
        }

    def write(self) -> Path:
        path = self.root / self.FILENAME
        _atomic_write(path, json.dumps(self.to_dict(), indent=2).encode())
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / cls.FILENAME
        try:
            d = json.loads(path.read_text())
        except OSError as exc:
            raise CheckpointIOError(f"cannot read manifest {path}: {exc}") from exc
        return cls(config=d["config"], version=d["version"], config_hash=d["config_hash"],
                   param_hash=d["param_hash"], grid_hash=d["grid_hash"], files=d["files"],
                   checkpoints=d["checkpoints"], wall_clock=d.get("wall_clock", {}),
                   status=d.get("status", "incomplete"), base_dir=d.get("base_dir", ""),
                   root=path.parent)

    def verify(self, raise_on_error: bool = True) -> list:
        """Every indexed file exists and matches its recorded hash."""
        problems = []
        for rel, digest in self.files.items():
            p = self.root / rel
            if not p.exists():
                problems.append(f"missing file {rel}")
            elif file_sha256(p) != digest:
                problems.append(f"hash mismatch for {rel}")
        if problems and raise_on_error:
            raise ManifestError(problems)
        return problems


# ---------------------------------------------------------------------------
# trajectories on disk


def write_steps(path, steps) -> Path:
    path = Path(path)
    _atomic_write(path, json.dumps([s.to_dict() for s in steps]).encode())
    return path


def read_steps(path) -> list:
    return [StepInfo(**d) for d in json.loads(Path(path).read_text())]


def write_events(path, events) -> Path:
    path = Path(path)
    _atomic_write(path, json.dumps({"events": [e.to_dict() for e in events]}, indent=2).encode())
    return path


def read_events(path) -> list:
    return [ContactEvent(**d) for d in json.loads(Path(path).read_text())["events"]]


class RunWriter:
    """Owns one run directory: checkpoints every stored sample and keeps the manifest current."""

    def __init__(self, config: RunConfig, root):
        self.config = config
        self.root = Path(root)
        (self.root / "checkpoints").mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest.for_config(config, self.root)
        self._t0 = time.perf_counter()
        self.manifest.wall_clock["started"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        snapshot = self.root / "config.toml"
        _atomic_write(snapshot, dumps_toml(config).encode())
        self.manifest.add_file(snapshot)

    def on_sample(self, sample: Sample, sim: SimState | None = None) -> None:
        state = sim if sim is not None else SimState(sample.fluid, sample.beam, sample.step)
        self.manifest.add_checkpoint(save_checkpoint(state, self.root / "checkpoints"))

    def finish(self, trajectory: Trajectory, status: str) -> RunManifest:
        from .diagnostics import energy_ledger

        have = {c["step"] for c in self.manifest.checkpoints}
        for s in trajectory.samples:
            if s.step not in have:
                self.on_sample(s)
                have.add(s.step)
        self.manifest.checkpoints.sort(key=lambda c: c["step"])
        self.manifest.add_file(energy_ledger(trajectory).to_csv(self.root / "ledger.csv"))
        self.manifest.add_file(write_steps(self.root / "steps.json", trajectory.steps))
        self.manifest.add_file(write_events(self.root / "events.json", trajectory.events))
        self.manifest.status = status
        self.manifest.wall_clock["seconds"] = time.perf_counter() - self._t0
        self.manifest.write()
        return self.manifest


def run_and_store(config: RunConfig, root, start: SimState | None = None,
                  trajectory: Trajectory | None = None) -> tuple[Trajectory, RunManifest]:
    writer = RunWriter(config, root)
    if trajectory is not None:
        for s in trajectory.samples:
            writer.on_sample(s)
    traj = run(config, start=start, trajectory=trajectory, on_sample=writer.on_sample)
    status = "contact" if traj.halted else "complete"
    return traj, writer.finish(traj, status)


def load_trajectory(manifest) -> Trajectory:
    """Rebuild the stored trajectory bit for bit."""
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    manifest.verify()
    config = manifest.run_config()
    samples = []
    for entry in sorted(manifest.checkpoints, key=lambda c: c["step"]):
        st = load_checkpoint(manifest.root / entry["file"])
        samples.append(Sample(st.step, st.t, st.fluid, st.beam))
    traj = Trajectory(config, samples=samples, steps=read_steps(manifest.root / "steps.json"),
                      events=read_events(manifest.root / "events.json"))
    traj.initial = samples[0] if samples else None
    traj.eps_c = config.contact.threshold(float(np.min(samples[0].beam.height))) if samples else 0.0
    if samples:
        last = samples[-1]
        traj.last_state = SimState(last.fluid, last.beam, last.step)
    return traj


def resume(manifest, t: float, config: RunConfig | None = None) -> tuple[SimState, Trajectory]:
    """Latest checkpointed state at or before ``t`` and the trajectory prefix up to it.

    ``config`` (if given) must share the stored param hash; a longer ``T`` or
    different output cadence is allowed.
    """
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    if config is not None and config.param_hash() != manifest.param_hash:
        raise ParamHashMismatch(
            f"config param hash {config.param_hash()} differs from stored {manifest.param_hash}")
    entries = [c for c in manifest.checkpoints if c["t"] <= t * (1 + 1e-12) + 1e-15]
    if not entries:
        raise MissingCheckpoint(f"no checkpoint at or before t={t:g}")
    entry = max(entries, key=lambda c: c["step"])
    stored = load_trajectory(manifest)
    state = load_checkpoint(manifest.root / entry["file"])
    prefix = Trajectory(config or stored.config,
                        samples=[s for s in stored.samples if s.step <= state.step],
                        steps=[s for s in stored.steps if s.step <= state.step],
                        eps_c=stored.eps_c, initial=stored.initial)
    return state, prefix


def continue_run(manifest, t: float, config: RunConfig | None = None) -> Trajectory:
    """Resume at ``t`` and integrate to the end of ``config`` (default: the stored config)."""
    if not isinstance(manifest, RunManifest):
        manifest = RunManifest.load(manifest)
    config = config or manifest.run_config()
    state, prefix = resume(manifest, t, config)
    return run(config, start=state, trajectory=prefix)
