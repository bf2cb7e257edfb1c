import numpy as np
import pytest

from graphon_sde import rng
from graphon_sde.dynamics import (
    BrownianDriver,
    CoefficientModel,
    ConstantSigma,
    InitialSampler,
    LinearMean,
    TimeGrid,
    ZeroDrift,
    simulate_particle_system,
)
from graphon_sde.errors import ConfigError, DimensionMismatch, GridMismatch, KeyCollision
from graphon_sde.graphon import Constant, StepGraphon, UniformAttachment, discretize
from graphon_sde.graphs import deterministic_graph
from graphon_sde.limitsolver import (
    BlockLawTable,
    coupled_limit_trajectories,
    coupling_error,
    limit_blocks,
    measure_error,
    solve_graphon_sde,
    write_law_table,
)


def lm(a=-1.0, c=1.0, sigma=0.0):
    return CoefficientModel(LinearMean(a, c), ConstantSigma(sigma))


def test_zero_graphon_converges_in_one_iteration():
    laws, st = solve_graphon_sde(StepGraphon([[0.0]]), lm(sigma=1.0), InitialSampler(),
                                 TimeGrid(1, 50), 16, seed=0)
    assert st.converged and st.iteration == 1 and st.residuals == [0.0]


def test_mean_field_fixed_point():
    laws, st = solve_graphon_sde(StepGraphon([[1.0]]), lm(), InitialSampler(x0=1.0),
                                 TimeGrid(1, 100), 8, seed=0)
    assert np.max(np.abs(laws.samples - 1.0)) <= 1e-10
    assert st.converged and st.iteration <= 2 and st.residuals[-1] == 0


def test_decay_matches_euler_recursion():
    laws, _ = solve_graphon_sde(StepGraphon([[1.0]]), lm(c=0.0), InitialSampler(x0=1.0),
                                TimeGrid(1, 100), 4, seed=0)
    np.testing.assert_allclose(laws.block_means(100), 0.99 ** 100, rtol=1e-12)


def test_solver_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        solve_graphon_sde(StepGraphon([[1.0]]), lm(), InitialSampler(), TimeGrid(1, 10), 1, 0)
    with pytest.raises(ConfigError):
        solve_graphon_sde(StepGraphon([[1.0]]), lm(), InitialSampler(), TimeGrid(1, 10), 4, 0,
                          tol=0)


@pytest.mark.parametrize("drift", [LinearMean(-1.0, 1.0), LinearMean(0.5, -2.0)])
def test_picard_residual_monotone(drift):
    model = CoefficientModel(drift, ConstantSigma(1.0))
    gN = discretize(UniformAttachment(), 8)
    for T in (1.0, 0.5, 0.25):
        _, st = solve_graphon_sde(gN, model, InitialSampler("gaussian", seed=1),
                                  TimeGrid(T, 50), 16, seed=1, tol=1e-14, max_iters=12)
        r = st.residuals
        if all(r[k + 1] <= r[k] for k in range(1, len(r) - 1)):
            break
    else:
        pytest.fail(f"residuals not monotone at any T: {r}")
    assert all(x >= 0 for x in r)


def test_block_exchangeability_for_constant_graphon():
    K, M = 8, 200
    gN = StepGraphon(np.ones((K, K)))
    laws, _ = solve_graphon_sde(gN, lm(sigma=1.0), InitialSampler("gaussian", seed=2),
                                TimeGrid(1, 50), M, seed=2)
    means = laws.samples[:, -1, :, 0].mean(axis=1)
    se = laws.samples[:, -1, :, 0].std(ddof=1) / np.sqrt(M)
    assert means.max() - means.min() <= 4 * se * np.sqrt(2)


def test_moments_bounded_across_block_counts():
    m2 = []
    for K in (8, 32, 128):
        gN = discretize(UniformAttachment(), K)
        laws, _ = solve_graphon_sde(gN, lm(sigma=1.0), InitialSampler("gaussian", seed=3),
                                    TimeGrid(1, 50), 16, seed=3)
        sup2 = np.max(np.abs(laws.samples[..., 0]), axis=1) ** 2
        m2.append(sup2.mean())
    assert max(m2) / min(m2) < 1.25


def test_elln_analogue():
    gN = discretize(UniformAttachment(), 8)
    gaps = []
    for M in (16, 256):
        errs = []
        for seed in range(20):
            laws, _ = solve_graphon_sde(gN, lm(sigma=1.0), InitialSampler("gaussian", seed=seed),
                                        TimeGrid(1, 25), M, seed=seed)
            errs.append(abs(laws.samples[:, -1, :, 0].mean()))
        gaps.append(np.mean(errs))
    # the exact law has mean 0 (symmetric init, linear drift)
    assert gaps[1] < gaps[0]


def test_coupled_trajectories_share_noise_with_finite_system():
    N, grid = 6, TimeGrid(1, 20)
    model = lm(sigma=1.0)
    G = deterministic_graph(Constant(1), N, 1.0)
    rec_f, rec_l = [], []
    init = InitialSampler("gaussian", seed=4)
    x0 = init.sample(np.arange(N))
    fin = simulate_particle_system(G, model, init, grid, BrownianDriver(4, grid.dt, recorder=rec_f))
    laws, _ = solve_graphon_sde(StepGraphon([[1.0]]), model, init, grid, 32, seed=4)
    lim = coupled_limit_trajectories(laws, model, x0, BrownianDriver(4, grid.dt, recorder=rec_l),
                                     np.arange(N), G.points)
    assert len(rec_f) == len(rec_l) == grid.S
    for (kf, sf, zf), (kl, sl, zl) in zip(rec_f, rec_l):
        assert sf == sl and np.array_equal(kf, kl) and zf.tobytes() == zl.tobytes()
    np.testing.assert_array_equal(fin.states[:, 0], lim.states[:, 0])


def test_aux_keys_are_disjoint_from_particle_keys():
    laws, _ = solve_graphon_sde(StepGraphon([[1.0]]), lm(), InitialSampler(), TimeGrid(1, 4), 2, 0)
    with pytest.raises(KeyCollision):
        coupled_limit_trajectories(laws, lm(), np.zeros(1), BrownianDriver(0, 0.25),
                                   rng.aux_key(np.array([0]), np.array([0])), [0.0])
    with pytest.raises(GridMismatch):
        coupled_limit_trajectories(laws, lm(), np.zeros(1), BrownianDriver(0, 0.5), [0], [0.0])


def test_zero_dynamics_coupling_error_zero():
    N, grid = 10, TimeGrid(1, 10)
    model = CoefficientModel(ZeroDrift(), ConstantSigma(0.0))
    G = deterministic_graph(Constant(1), N, 1.0)
    init = InitialSampler("uniform", seed=1)
    fin = simulate_particle_system(G, model, init, grid, BrownianDriver(0, grid.dt))
    laws, _ = solve_graphon_sde(StepGraphon([[1.0]]), model, init, grid, 4, 0)
    lim = coupled_limit_trajectories(laws, model, fin.states[:, 0], BrownianDriver(0, grid.dt),
                                     np.arange(N), G.points)
    assert coupling_error(fin, lim, 1)[0] == 0


def test_coupling_error_formulae():
    grid = TimeGrid(1, 10)
    G = deterministic_graph(Constant(1), 5, 1.0)
    model = lm(sigma=1.0)
    a = simulate_particle_system(G, model, InitialSampler(), grid, BrownianDriver(0, grid.dt))
    assert coupling_error(a, a, 1)[0] == 0
    b = type(a)(a.times, a.states.copy(), a.keys)
    b.states[2] += 0.3
    for order in (1, 2):
        val, prof = coupling_error(a, b, order)
        assert val == pytest.approx(0.3 ** order / 5, rel=1e-12)
        np.testing.assert_allclose(prof, 0.3 ** order / 5, rtol=1e-12)
    b.states += np.random.default_rng(0).normal(size=b.states.shape)
    assert coupling_error(a, b, 1)[0] <= np.sqrt(coupling_error(a, b, 2)[0]) + 1e-12
    with pytest.raises(DimensionMismatch):
        coupling_error(a, type(a)(a.times, a.states[:3], a.keys[:3]), 1)


def _mean_field_coupling(M, seed, N=256):
    grid = TimeGrid(1, 50)
    model = lm(sigma=1.0)
    init = InitialSampler("gaussian", seed=seed)
    G = deterministic_graph(Constant(1), N, 1.0)
    fin = simulate_particle_system(G, model, init, grid, BrownianDriver(seed, grid.dt))
    laws, _ = solve_graphon_sde(StepGraphon([[1.0]]), model, init, grid, M, seed)
    lim = coupled_limit_trajectories(laws, model, fin.states[:, 0], BrownianDriver(seed, grid.dt),
                                     np.arange(N), G.points)
    return coupling_error(fin, lim, 1)[0]


def test_coupling_error_decreases_with_M():
    errs = {M: np.mean([_mean_field_coupling(M, s) for s in range(20)]) for M in (8, 64, 512)}
    assert errs[512] < errs[64] < errs[8]


def test_measure_error_examples():
    N, grid = 8, TimeGrid(1, 5)
    G = deterministic_graph(Constant(1), N, 1.0)
    x = np.random.default_rng(0).normal(size=(N, 1))
    samples = np.broadcast_to(x[None, None, :, :], (1, 6, N, 1)).copy()
    laws = BlockLawTable(samples, StepGraphon([[1.0]]), grid)
    states = np.broadcast_to(x[:, None, :], (N, 6, 1))
    assert measure_error(G, states, laws, 5, G.points) < 1e-12
    G0 = deterministic_graph(Constant(0), N, 1.0)
    laws0 = BlockLawTable(samples, StepGraphon([[0.0]]), grid)
    assert measure_error(G0, states, laws0, 5, G0.points) == 0


def test_measure_error_decreases_jointly():
    def err(N, seed):
        grid = TimeGrid(1, 20)
        model = lm(sigma=1.0)
        init = InitialSampler("gaussian", seed=seed)
        G = deterministic_graph(Constant(1), N, 1.0)
        fin = simulate_particle_system(G, model, init, grid, BrownianDriver(seed, grid.dt))
        laws, _ = solve_graphon_sde(StepGraphon([[1.0]]), model, init, grid, N, seed + 1000)
        return measure_error(G, fin.states, laws, grid.S, G.points, particles=4)
    e64 = np.mean([err(64, s) for s in range(10)])
    e128 = np.mean([err(128, s) for s in range(10)])
    assert e128 < e64


def test_law_table_round_trip(tmp_path):
    gN = discretize(UniformAttachment(), 3)
    grid = TimeGrid(1, 4)
    laws, st = solve_graphon_sde(gN, lm(sigma=1.0), InitialSampler("gaussian"), grid, 5, 0)
    back = BlockLawTable.from_text(laws.to_text(), gN, grid)
    assert np.array_equal(back.samples, laws.samples)
    summary = write_law_table(laws, st, tmp_path / "laws")
    assert summary["K"] == 3 and summary["residuals"] == st.residuals
    assert (tmp_path / "laws.txt").read_text() == laws.to_text()


def test_limit_blocks():
    assert limit_blocks(True, 50) == (1, 200)
    assert limit_blocks(False, 64) == (64, 4)
    assert limit_blocks(False, 1024) == (256, 16)
    with pytest.raises(DimensionMismatch):
        BlockLawTable(np.zeros((2, 5, 3, 1)), StepGraphon([[1.0]]), TimeGrid(1, 4))
