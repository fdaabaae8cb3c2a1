import numpy as np, pytest
from sprints.store import StateStore, RtrlJacobians, MAGIC
from utils.errors import ConfigError, CheckpointError, NumericError

def test_unseen_nodes_start_at_zero():
    store = StateStore(5, 4, rows=2, feature_dim=3)
    state, jac = store.get_or_init(2)

    np.testing.assert_array_equal(state, np.zeros(4))
    assert jac.j_w.shape == (4, 2, 3) and not jac.j_w.any()
    assert store.initialized[2] and not store.initialized[1]

def test_snapshot_is_isolated_from_commits():
    store = StateStore(4, 3, frozen=True)
    snap = store.snapshot_batch([1, 1, 3])

    assert len(snap) == 2 and 1 in snap and 2 not in snap
    store.commit_batch(np.array([1]), np.array([0.0]), np.ones((1, 3)))

    # later commits leave the snapshot untouched
    np.testing.assert_array_equal(snap.state([1, 1]), np.zeros((2, 3)))
    np.testing.assert_array_equal(store.states[1], np.ones(3))

def test_winner_is_latest_then_last():
    nodes = np.array([0, 1, 0, 0, 1])
    times = np.array([2.0, 1.0, 3.0, 3.0, 0.5])
    winners = StateStore.winners(nodes, times)

    # node 0: two entries at t=3, the later position wins; node 1: t=1
    assert sorted(winners.tolist()) == [1, 3]

def test_commit_keeps_winner_states():
    store = StateStore(3, 2, frozen=True)
    states = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    store.commit_batch(np.array([0, 0, 2]), np.array([5.0, 4.0, 1.0]), states)

    np.testing.assert_array_equal(store.states[0], [1.0, 1.0])
    np.testing.assert_array_equal(store.states[2], [3.0, 3.0])

def test_commit_checks():
    store = StateStore(3, 2, rows=1, feature_dim=1)
    with pytest.raises(ConfigError, match='needs Jacobians'):
        store.commit_batch(np.array([0]), np.array([0.0]), np.zeros((1, 2)))
    with pytest.raises(ConfigError, match='state shape'):
        store.commit_batch(np.array([0]), np.array([0.0]), np.zeros((1, 3)),
                           RtrlJacobians.zeros(2, 1, 1, lead=(1,)))
    with pytest.raises(ConfigError, match='out of range'):
        store.snapshot_batch([3])

def test_reset_and_freeze():
    store = StateStore(2, 2, rows=1, feature_dim=2)
    jac = RtrlJacobians(np.ones((1, 2)), np.ones((1, 2)), np.ones((1, 2, 1, 2)))
    store.commit_batch(np.array([1]), np.array([0.0]), np.ones((1, 2)), jac)

    store.reset()
    assert not store.states.any() and not store.jacobians.j_w.any()
    assert not store.initialized.any()

    store.freeze()
    assert store.frozen and store.get_or_init(0)[1] is None

def test_diagnostics():
    s, h, f = 10, 2, 5
    learning = StateStore(4, s, rows=h, feature_dim=f).diagnostics()
    frozen = StateStore(4, s, frozen=True, precision=32).diagnostics()

    assert learning['numbers_per_node'] == s + 2 * s + s * h * f
    assert learning['bytes_allocated'] == 4 * (s + 2 * s + s * h * f) * 8
    assert frozen['bytes_per_node'] == s * 4

def test_checkpoint_round_trip(tmp_path, rng):
    store = StateStore(6, 4, rows=2, feature_dim=3)
    nodes = np.array([0, 4])
    jac = RtrlJacobians(rng.random((2, 4)), rng.random((2, 4)), rng.random((2, 4, 2, 3)))
    store.commit_batch(nodes, np.zeros(2), rng.random((2, 4)), jac)

    path = str(tmp_path / 'store.bin')
    store.checkpoint(path)
    back = StateStore.restore(path, state_size=4)

    np.testing.assert_array_equal(back.states, store.states)
    np.testing.assert_array_equal(back.initialized, store.initialized)
    np.testing.assert_array_equal(back.jacobians.j_w, store.jacobians.j_w)

def test_checkpoint_errors():
    blob = StateStore(3, 2, frozen=True).to_bytes()
    assert blob.startswith(MAGIC)

    with pytest.raises(CheckpointError, match='bad checkpoint header'):
        StateStore.from_bytes(b'XXXX' + blob[4:])
    with pytest.raises(CheckpointError, match='truncated'):
        StateStore.from_bytes(blob[:-1])
    with pytest.raises(CheckpointError, match='state size'):
        StateStore.from_bytes(blob, state_size=5)

def test_commit_rejects_non_finite_entries():
    store = StateStore(3, 2, rows=1, feature_dim=2)
    jac = RtrlJacobians.zeros(2, 1, 2, lead=(1,))
    jac.j_w[0, 1, 0, 1] = np.inf

    with pytest.raises(NumericError, match='non-finite'):
        store.commit_batch(np.array([1]), np.array([0.0]), np.ones((1, 2)), jac)
    with pytest.raises(NumericError):
        store.commit_batch(np.array([1]), np.array([0.0]), np.array([[np.nan, 0.0]]),
                           RtrlJacobians.zeros(2, 1, 2, lead=(1,)))
    # nothing was written
    assert not store.initialized.any()
