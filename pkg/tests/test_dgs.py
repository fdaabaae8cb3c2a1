import time, numpy as np, torch, pytest
from dataclasses import replace
from sprints import dgs
from sprints.encoder import DgsEncoder, interleave
from sprints.gs import bucketize
from sprints.store import RtrlJacobians
from utils.errors import ConfigError, NumericError
from conftest import make_stream, identity_stats

S, M, H, F = 6, 3, 2, 4

def random_instance(rng, n_events=12, n_src=2, n_dst=2, batch_size=3):
    src = rng.integers(0, n_src, size=n_events)
    dst = rng.integers(0, n_dst, size=n_events) + n_src
    features = rng.normal(size=(n_events, F))
    stream = make_stream(src, dst, features, source_count=n_src, node_count=n_src + n_dst)
    g = rng.normal(size=(n_events, S))
    return stream, g, batch_size

def random_params(rng, variant='dgs', state_size=S, segments=M, temperature=1.5):
    params = dgs.init_params(variant, state_size, segments, F, temperature, seed=int(rng.integers(1 << 16)))
    params.alpha = rng.uniform(0.1, 0.9, size=params.state_size)
    params.beta = rng.uniform(0.1, 0.9, size=params.state_size)
    if variant == 'dgs_s':
        params.alpha[:] = params.alpha[0]
        params.beta[:] = params.beta[0]
    if variant == 'dgs_sum':
        # positive logits keep the divide-by-sum denominator away from zero
        params.w = np.abs(params.w) + 0.1
    return params

def stream_features(stream, variant):
    if variant == 'dgs_sum':
        return replace(stream, features=np.abs(stream.features) + 0.1)
    return stream

def rtrl_grads(params, stream, g, batch_size, stats):
    encoder = DgsEncoder(params, stats, stream.node_count, chunk_size=2)
    total = dgs.DgsGrads.zeros(params)
    for lo in range(0, len(stream), batch_size):
        batch = stream[lo:lo + batch_size]
        snap = encoder.snapshot(np.concatenate([batch.src, batch.dst]))
        fwd = encoder.forward(batch, snap)
        total = total + encoder.propagate(batch, snap, fwd, g[lo:lo + batch_size])
    return total

def numpy_loss(params, stream, g, batch_size, stats):
    encoder = DgsEncoder(params, stats, stream.node_count, frozen=True)
    loss = 0.0
    for lo in range(0, len(stream), batch_size):
        batch = stream[lo:lo + batch_size]
        snap = encoder.snapshot(np.concatenate([batch.src, batch.dst]))
        fwd = encoder.forward(batch, snap)
        loss += (g[lo:lo + batch_size] * fwd.s_src).sum()
        encoder.propagate(batch, snap, fwd)
    return loss

def torch_loss(alpha, beta, w, params, stream, g, batch_size, embed_fn):
    '''
    Fully unrolled reverse-mode reference with per-batch snapshots
    '''
    zero = torch.zeros(params.state_size, dtype=torch.float64)
    states, loss = {}, 0.0
    for lo in range(0, len(stream), batch_size):
        snap, new = dict(states), {}
        for idx in range(lo, min(lo + batch_size, len(stream))):
            u, v = int(stream.src[idx]), int(stream.dst[idx])
            e = embed_fn(w, idx)
            s_u, s_v = snap.get(u, zero), snap.get(v, zero)
            new_u = beta * s_u + (1 - beta) * ((1 - alpha) * e + alpha * s_v)
            new_v = beta * s_v + (1 - beta) * ((1 - alpha) * e + alpha * s_u)
            loss = loss + (torch.from_numpy(g[idx]) * new_u).sum()
            new[u], new[v] = new_u, new_v
        states.update(new)
    return loss

def torch_embedding(params, stream, stats):
    features = torch.from_numpy(stream.features)
    if params.variant in dgs.STATIC_VARIANTS:
        delta = torch.from_numpy(bucketize(stream.features, stats.bucket_edges))
        return lambda w, idx: delta[idx]

    def embed(w, idx):
        z = (w @ features[idx]).reshape(params.segments, -1)
        if params.variant == 'dgs_sum':
            e = z / (z.sum(dim=-1, keepdim=True) + dgs.SUM_EPSILON)
        else:
            e = torch.softmax(z / params.temperature, dim=-1)
        return e.reshape(-1)
    return embed

def torch_grads(params, stream, g, batch_size, stats):
    to_torch = lambda arr: torch.tensor(arr, dtype=torch.float64, requires_grad=True)
    if params.tied:
        a0, b0 = to_torch(params.alpha[0]), to_torch(params.beta[0])
        alpha, beta = a0.expand(params.state_size), b0.expand(params.state_size)
        leaves = [a0, b0]
    else:
        alpha, beta = to_torch(params.alpha), to_torch(params.beta)
        leaves = [alpha, beta]

    w = None
    if params.w is not None:
        w = to_torch(params.w)
        leaves.append(w)

    loss = torch_loss(alpha, beta, w, params, stream, g, batch_size,
                      torch_embedding(params, stream, stats))
    grads = [t.numpy() for t in torch.autograd.grad(loss, leaves)]
    if params.tied:
        grads[0] = np.full(params.state_size, grads[0])
        grads[1] = np.full(params.state_size, grads[1])
    return grads

@pytest.mark.parametrize('variant', ['dgs', 'dgs_sum', 'dgs_v', 'dgs_s'])
def test_rtrl_matches_unrolled_autograd(variant, rng):
    stats = identity_stats(F)
    for _ in range(15):
        stream, g, batch_size = random_instance(rng, batch_size=int(rng.integers(1, 5)))
        stream = stream_features(stream, variant)
        if variant in dgs.STATIC_VARIANTS:
            # static states are the concatenated bucket one-hots
            params = random_params(rng, variant, state_size=int(stats.bucket_counts.sum()))
            g = rng.normal(size=(len(stream), params.state_size))
        else:
            params = random_params(rng, variant)

        got = rtrl_grads(params, stream, g, batch_size, stats)
        want = torch_grads(params, stream, g, batch_size, stats)

        np.testing.assert_allclose(got.alpha, want[0], rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(got.beta, want[1], rtol=1e-8, atol=1e-10)
        if params.w is not None:
            np.testing.assert_allclose(got.w, want[2], rtol=1e-8, atol=1e-10)

def test_rtrl_matches_finite_differences(rng):
    stats = identity_stats(F)
    step = 1e-5
    for _ in range(50):
        stream, g, batch_size = random_instance(rng, n_events=int(rng.integers(2, 13)),
                                                batch_size=int(rng.integers(1, 5)))
        params = random_params(rng)
        got = rtrl_grads(params, stream, g, batch_size, stats)

        for name in ('alpha', 'beta', 'w'):
            value = getattr(params, name)
            fd = np.zeros_like(value)
            for pos in np.ndindex(value.shape):
                plus, minus = params.copy(), params.copy()
                getattr(plus, name)[pos] += step
                getattr(minus, name)[pos] -= step
                fd[pos] = (numpy_loss(plus, stream, g, batch_size, stats) -
                           numpy_loss(minus, stream, g, batch_size, stats)) / (2 * step)

            np.testing.assert_allclose(getattr(got, name), fd, rtol=1e-4, atol=1e-7)

def test_threads_and_chunks_do_not_change_gradients(rng):
    stats = identity_stats(F)
    stream, g, _ = random_instance(rng, n_events=12, batch_size=6)
    params = random_params(rng)

    def run(threads, chunk_size):
        encoder = DgsEncoder(params, stats, stream.node_count, threads=threads,
                             chunk_size=chunk_size)
        snap = encoder.snapshot(np.concatenate([stream.src, stream.dst]))
        grads = encoder.propagate(stream, snap, encoder.forward(stream, snap), g)
        return grads, encoder.store.jacobians.j_w.copy()

    (g1, j1), (g2, j2) = run(1, 12), run(3, 1)
    np.testing.assert_allclose(g1.w, g2.w, rtol=1e-12, atol=1e-12)
    np.testing.assert_array_equal(j1, j2)

def test_truncated_backprop_misses_the_history_term(rng):
    '''
    Two single-event batches on one (u, v) pair: RTRL minus truncated
    backprop equals the gradient that flows through the first batch's states
    '''
    stats = identity_stats(F)
    stream = make_stream([0, 0], [1, 1], rng.normal(size=(2, F)), source_count=1, node_count=2)
    g = np.vstack([np.zeros(S), rng.normal(size=S)])
    params = random_params(rng)

    rtrl = rtrl_grads(params, stream, g, 1, stats)

    bp_params = replace(params.copy(), variant='dgs_bp')
    encoder = DgsEncoder(bp_params, stats, stream.node_count)
    bp = dgs.DgsGrads.zeros(params)
    for lo in range(2):
        batch = stream[lo:lo + 1]
        snap = encoder.snapshot(np.concatenate([batch.src, batch.dst]))
        bp = bp + encoder.propagate(batch, snap, encoder.forward(batch, snap), g[lo:lo + 1])

    # the history term: first-batch states weighted by their coefficients in the second update
    alpha = torch.tensor(params.alpha, requires_grad=True)
    beta = torch.tensor(params.beta, requires_grad=True)
    w = torch.tensor(params.w, requires_grad=True)
    embed = torch_embedding(params, stream, stats)
    e = embed(w, 0)
    s_u = (1 - beta) * (1 - alpha) * e
    s_v = (1 - beta) * (1 - alpha) * e
    a_c, b_c = alpha.detach(), beta.detach()
    g2 = torch.from_numpy(g[1])
    history = (g2 * (b_c * s_u + (1 - b_c) * a_c * s_v)).sum()
    want = torch.autograd.grad(history, [alpha, beta, w])

    np.testing.assert_allclose(rtrl.alpha - bp.alpha, want[0].numpy(), atol=1e-10)
    np.testing.assert_allclose(rtrl.beta - bp.beta, want[1].numpy(), atol=1e-10)
    np.testing.assert_allclose(rtrl.w - bp.w, want[2].numpy(), atol=1e-10)

def test_worked_example_fresh_nodes():
    params = dgs.init_params('dgs', S, M, F)
    features = np.array([1.0, -1.0, 0.5, 2.0])
    e = dgs.embed(params, features)
    state = dgs.state_update(params, np.zeros(S), np.zeros(S), e)

    # S_1 = (1 - beta)(1 - alpha) E = E / 4 at alpha = beta = 0.5
    np.testing.assert_allclose(state, e.values / 4)
    np.testing.assert_allclose(e.values.reshape(M, H).sum(axis=1), np.ones(M))

def test_segments_normalize_and_states_stay_bounded(rng):
    for _ in range(10000):
        m = int(rng.integers(1, 4))
        h = int(rng.integers(1, 4))
        w = rng.normal(scale=5.0, size=(m * h, 3))
        features = rng.normal(scale=5.0, size=3)
        temperature = rng.uniform(1.0, 10.0)

        e = dgs.embed_features(w, features, temperature, m)
        np.testing.assert_allclose(e.values.reshape(m, h).sum(axis=1), 1.0, atol=1e-9)

        alpha, beta = rng.uniform(0, 1, size=(2, m * h))
        s_prev, s_star = rng.uniform(0, 1, size=(2, m * h))
        state = dgs.convex_update(alpha, beta, s_prev, s_star, e.values)
        assert np.all(state >= 0.0) and np.all(state <= 1.0)

def test_sgd_step_clips_and_scales():
    params = dgs.init_params('dgs', S, M, F, learning_rate_er=1.0)
    grads = dgs.DgsGrads(np.full(S, -10.0), np.full(S, 10.0), np.ones((S, F)))
    new = dgs.sgd_step(params, grads, batch_size=2)

    np.testing.assert_array_equal(new.alpha, 1.0)
    np.testing.assert_array_equal(new.beta, 0.0)
    np.testing.assert_allclose(new.w, params.w - 0.5)

    grads.w[0, 0] = np.nan
    with pytest.raises(NumericError):
        dgs.sgd_step(params, grads, 1)

def test_tied_gradients_are_broadcast():
    params = dgs.init_params('dgs_s', S, 1, F)
    jac = RtrlJacobians(np.ones((1, S)), np.full((1, S), 2.0), np.zeros((1, S, 0, 0)))
    grads = dgs.accumulate_param_grads(np.arange(S, dtype=float)[None], jac, params)

    np.testing.assert_array_equal(grads.alpha, np.full(S, 15.0))
    np.testing.assert_array_equal(grads.beta, np.full(S, 30.0))

def test_config_validation():
    with pytest.raises(ConfigError, match='not divisible'):
        dgs.validate_config(100, 30)
    with pytest.raises(ConfigError, match='must equal'):
        dgs.validate_config(100, 10, rows=5)
    with pytest.warns(RuntimeWarning):
        dgs.validate_config(120, 10, task='node_class')
    with pytest.raises(ConfigError, match='temperature'):
        dgs.embed_features(np.ones((4, 2)), np.ones(2), 0.5, 2)
    with pytest.raises(ConfigError, match='unknown variant'):
        dgs.init_params('dgs_x', S, M, F)

def test_parameter_counts():
    assert dgs.init_params('dgs', 100, 10, 10).count() == 1200
    assert dgs.init_params('dgs_v', 40, 1, 10).count() == 80
    assert dgs.init_params('dgs_s', 40, 1, 10).count() == 2

def test_interleave_is_event_major():
    a, b = np.array([1, 2, 3]), np.array([10, 20, 30])
    np.testing.assert_array_equal(interleave(a, b), [1, 10, 2, 20, 3, 30])

@pytest.mark.slow
def test_propagation_scales_linearly_in_state_size(rng):
    h, f, batch = 2, 172, 50

    def median_time(s):
        params = dgs.init_params('dgs', s, s // h, f)
        features = rng.normal(size=(batch, f))
        e = dgs.embed(params, features)
        own = (np.zeros((batch, s)), RtrlJacobians.zeros(s, h, f, lead=(batch,)))
        times = []
        for _ in range(5):
            start = time.perf_counter()
            dgs.rtrl_propagate(params, own, own, e, features)
            times.append(time.perf_counter() - start)
        return np.median(times)

    assert median_time(400) / median_time(100) <= 5.0
