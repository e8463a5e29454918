import json

import numpy as np
import pytest

from fsibeam import store
from fsibeam.solver.coupled import run
from fsibeam.solver.initial import initial_state


def short(cfg, T, **grid):
    return cfg.with_overrides(grid={"T": T, **grid})


def assert_same_state(a, b):
    for name in ("u1", "u2", "p", "h"):
        assert np.array_equal(getattr(a.fluid, name), getattr(b.fluid, name)), name
    assert np.array_equal(a.beam.eta, b.beam.eta) and np.array_equal(a.beam.eta_dot, b.beam.eta_dot)
    assert a.step == b.step and a.t == b.t


@pytest.fixture(scope="module")
def stored_bump(tmp_path_factory, bump_config):
    root = tmp_path_factory.mktemp("bump")
    cfg = short(bump_config, 0.04)
    traj, manifest = store.run_and_store(cfg, root)
    return cfg, traj, manifest


def test_checkpoint_round_trip_is_bit_exact(tmp_path, contact_config):
    state = initial_state(contact_config)
    receipt = store.save_checkpoint(state, tmp_path)
    assert receipt.path.parent == tmp_path and receipt.path.name.startswith("state_00000000_")
    assert receipt.sha256 == store.file_sha256(receipt.path)
    assert_same_state(store.load_checkpoint(receipt.path), state)


def test_checkpoint_corruption_is_detected(tmp_path, contact_config):
    receipt = store.save_checkpoint(initial_state(contact_config), tmp_path / "s.ckpt")
    raw = bytearray(receipt.path.read_bytes())
    receipt.path.write_bytes(bytes(raw[: len(raw) // 2]))
    with pytest.raises(store.ChecksumError):
        store.load_checkpoint(receipt.path)
    raw[-1] ^= 0xFF
    receipt.path.write_bytes(bytes(raw))
    with pytest.raises(store.ChecksumError):
        store.load_checkpoint(receipt.path)
    with pytest.raises(store.CheckpointIOError):
        store.load_checkpoint(tmp_path / "missing.ckpt")


def test_run_directory_layout(stored_bump):
    cfg, traj, manifest = stored_bump
    root = manifest.root
    for name in ("config.toml", "ledger.csv", "steps.json", "events.json", "manifest.json"):
        assert (root / name).exists(), name
    assert manifest.status == "complete"
    assert [c["step"] for c in manifest.checkpoints] == [s.step for s in traj.samples]
    assert manifest.verify() == []
    data = json.loads((root / "manifest.json").read_text())
    assert data["schema"] == 1 and data["param_hash"] == cfg.param_hash()


def test_trajectory_reload_is_bit_exact(stored_bump):
    _, traj, manifest = stored_bump
    back = store.load_trajectory(manifest.root)
    assert len(back.samples) == len(traj.samples)
    for a, b in zip(traj.samples, back.samples):
        assert_same_state(a, b)
    assert [s.to_dict() for s in back.steps] == [s.to_dict() for s in traj.steps]


def test_manifest_verify_reports_tampering(tmp_path, rest_config):
    _, manifest = store.run_and_store(short(rest_config, 0.01), tmp_path / "r")
    (manifest.root / "ledger.csv").write_text("tampered\n")
    (manifest.root / "steps.json").unlink()
    problems = manifest.verify(raise_on_error=False)
    assert problems == ["hash mismatch for ledger.csv", "missing file steps.json"]
    with pytest.raises(store.ManifestError):
        store.load_trajectory(manifest.root)


def test_resume_and_continue_match_original(stored_bump):
    cfg, traj, manifest = stored_bump
    state, prefix = store.resume(manifest.root, 0.02)
    assert state.step == 20 and prefix.samples[-1].step == 20
    cont = store.continue_run(manifest.root, 0.02)
    for a, b in zip(traj.samples, cont.samples):
        np.testing.assert_allclose(b.beam.eta, a.beam.eta, atol=10 * cfg.coupling.tol)
        np.testing.assert_allclose(b.fluid.u1, a.fluid.u1, atol=10 * cfg.coupling.tol)
    assert len(cont.steps) == len(traj.steps)


def test_resume_guards(stored_bump):
    cfg, _, manifest = stored_bump
    with pytest.raises(store.ParamHashMismatch):
        store.resume(manifest.root, 0.02, cfg.with_overrides(params={"mu": 0.2}))
    with pytest.raises(store.MissingCheckpoint):
        store.resume(manifest.root, -1.0)
    # a longer horizon is compatible
    state, _ = store.resume(manifest.root, 0.02, cfg.with_overrides(grid={"T": 1.0}))
    assert state.step == 20


def test_replay_is_deterministic(bump_config):
    cfg = short(bump_config, 0.02)
    a, b = run(cfg), run(cfg)
    assert store.encode_state(a.last_state) == store.encode_state(b.last_state)


def test_events_and_steps_round_trip(tmp_path, contact_config):
    traj = run(contact_config)
    store.write_events(tmp_path / "events.json", traj.events)
    store.write_steps(tmp_path / "steps.json", traj.steps[:3])
    assert store.read_events(tmp_path / "events.json") == traj.events
    assert store.read_steps(tmp_path / "steps.json") == traj.steps[:3]
