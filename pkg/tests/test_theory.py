import numpy as np
import pytest
from numpy.testing import assert_allclose

from apc import (
    LinearSystem,
    MissingGroundTruthError,
    closed_form_state,
    consensus_matrix,
    gain_from_system,
    initial_state,
    limit_state,
    noise_drive,
    optimal_params,
    partition_rows,
    predict_asymptotic_error,
    prediction_report,
    projection_complement,
    row_pseudoinverse,
    run_apc,
    stacked_error,
    transient_decay_fit,
)

from conftest import conditioned_system, gaussian_system


def _setup(system):
    blocks = partition_rows(system)
    projections = [projection_complement(b) for b in blocks]
    gain, spectrum, params = gain_from_system(system)
    d0 = initial_state(system, blocks, projections)
    drive = noise_drive(system, blocks, params)
    return blocks, projections, gain, spectrum, params, d0, drive


def _scalar_instance(a_val, w_val):
    x_star = np.array([1.5])
    w = np.array([w_val])
    a = np.array([[a_val]])
    return LinearSystem(a=a, y=a @ x_star + w, x_star=x_star, w_tilde=w)


def test_initial_state_identity_instance():
    x_star = np.array([1.0, 2.0, 3.0])
    system = LinearSystem(a=np.eye(3), y=x_star, x_star=x_star, w_tilde=np.zeros(3))
    blocks = partition_rows(system)
    projections = [projection_complement(b) for b in blocks]
    d0 = initial_state(system, blocks, projections)
    assert_allclose(d0.agent_block(1), np.array([0.0, -2.0, -3.0], dtype=complex), atol=1e-15)
    mean = (d0.agent_block(1) + d0.agent_block(2) + d0.agent_block(3)) / 3.0
    assert_allclose(d0.consensus_block(), mean, atol=1e-15)


def test_initial_state_matches_engine(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    record = run_apc(small_noisy_system, rounds=0, record_agents=True)
    engine_side = stacked_error(
        record.agent_trajectory[0], record.trajectory[0][1], small_noisy_system.x_star
    )
    assert np.abs(engine_side - d0.d).max() <= 1e-12


def test_initial_state_needs_ground_truth():
    system = LinearSystem(a=np.eye(2), y=[1.0, 2.0])
    blocks = partition_rows(system)
    projections = [projection_complement(b) for b in blocks]
    with pytest.raises(MissingGroundTruthError):
        initial_state(system, blocks, projections)


def test_noise_drive_blocks(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    noise = small_noisy_system.noise()
    agent_blocks = []
    for block in blocks:
        expected = params.gamma * row_pseudoinverse(block) * noise[block.index - 1]
        assert_allclose(drive.agent_block(block.index), expected, atol=1e-15)
        agent_blocks.append(expected)
    consensus = params.eta * sum(agent_blocks) / len(blocks)
    assert_allclose(drive.consensus_block(), consensus, atol=1e-14)


def test_scalar_instance_drive_and_limit():
    system = _scalar_instance(1.0, 0.25)
    blocks, projections, gain, spectrum, params, d0, drive = _setup(system)
    # gamma = eta = 1 and the single projector vanishes, so the gain is zero
    assert_allclose(gain.g, np.zeros((2, 2)), atol=1e-14)
    assert_allclose(drive.w_d, np.array([0.25, 0.25], dtype=complex), atol=1e-15)
    for t in (1, 2, 5):
        state = closed_form_state(gain, d0, drive, t)
        assert_allclose(state.d, drive.w_d, atol=1e-14)
    lim = limit_state(gain, drive)
    assert_allclose(lim.d, drive.w_d, atol=1e-14)


def test_closed_form_state_base_cases(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    assert closed_form_state(gain, d0, drive, 0) is d0

    noise_free = gaussian_system(8, 3, seed=3, noise_power=0.0)
    blocks, projections, gain, spectrum, params, d0, drive = _setup(noise_free)
    assert np.linalg.norm(drive.w_d) == 0.0
    for t in (1, 3, 7):
        state = closed_form_state(gain, d0, drive, t)
        expected = np.linalg.matrix_power(gain.g, t) @ d0.d
        assert np.abs(state.d - expected).max() <= 1e-12


def test_closed_form_matches_engine_trajectory(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    record = run_apc(small_noisy_system, rounds=50, params=params, record_agents=True)
    for t in range(51):
        engine_side = stacked_error(
            record.agent_trajectory[t], record.trajectory[t][1], small_noisy_system.x_star
        )
        theory_side = closed_form_state(gain, d0, drive, t)
        assert np.abs(engine_side - theory_side.d).max() <= 1e-9


def test_closed_form_matches_engine_complex_field():
    system = gaussian_system(6, 3, seed=23, complex_data=True)
    blocks, projections, gain, spectrum, params, d0, drive = _setup(system)
    record = run_apc(system, rounds=40, params=params, record_agents=True)
    for t in range(41):
        engine_side = stacked_error(
            record.agent_trajectory[t], record.trajectory[t][1], system.x_star
        )
        theory_side = closed_form_state(gain, d0, drive, t)
        assert np.abs(engine_side - theory_side.d).max() <= 1e-9


def test_limit_state_linear_in_noise(small_noisy_system):
    system = small_noisy_system
    doubled = LinearSystem(
        a=system.a,
        y=system.a @ system.x_star + 2.0 * system.w_tilde,
        x_star=system.x_star,
        w_tilde=2.0 * system.w_tilde,
    )
    blocks, projections, gain, spectrum, params, d0, drive = _setup(system)
    drive2 = noise_drive(doubled, blocks, params)
    one = limit_state(gain, drive)
    two = limit_state(gain, drive2)
    assert np.abs(two.d - 2.0 * one.d).max() <= 1e-10


def test_limit_state_agreement(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    lim = limit_state(gain, drive)
    far = closed_form_state(gain, d0, drive, 200)
    assert np.linalg.norm(far.d - lim.d) <= 1e-8

    noise_free = gaussian_system(8, 3, seed=3, noise_power=0.0)
    blocks, projections, gain, spectrum, params, d0, drive = _setup(noise_free)
    lim = limit_state(gain, drive)
    assert np.linalg.norm(lim.d) <= 1e-14


def test_short_circuit_deep_horizon(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    deep = closed_form_state(gain, d0, drive, 10**6)
    lim = limit_state(gain, drive)
    assert np.array_equal(deep.d, lim.d)


def test_asymptotic_prediction_noise_free():
    system = gaussian_system(8, 3, seed=3, noise_power=0.0)
    gain, spectrum, params = gain_from_system(system)
    prediction = predict_asymptotic_error(system, params, spectrum.x)
    assert np.linalg.norm(prediction.asymptotic) <= 1e-15
    assert prediction.transient_rate == params.alpha


def test_asymptotic_prediction_scalar_case():
    system = _scalar_instance(2.0, 0.3)
    blocks, projections, gain, spectrum, params, d0, drive = _setup(system)
    prediction = predict_asymptotic_error(system, params, spectrum.x)
    # single real row a: the settled consensus error is w / a
    assert_allclose(prediction.asymptotic, np.array([0.15], dtype=complex), atol=1e-15)
    assert_allclose(prediction.xi_diag, np.array([0.25]), atol=1e-15)
    lim = limit_state(gain, drive)
    assert_allclose(lim.consensus_block(), prediction.asymptotic, atol=1e-14)


def test_asymptotic_prediction_cross_check(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    prediction = predict_asymptotic_error(small_noisy_system, params, spectrum.x)
    lim = limit_state(gain, drive)
    gap = np.linalg.norm(lim.consensus_block() - prediction.asymptotic)
    assert gap <= 1e-8 * np.linalg.norm(prediction.asymptotic)


def test_prediction_linear_in_noise(small_noisy_system):
    system = small_noisy_system
    doubled = LinearSystem(
        a=system.a,
        y=system.a @ system.x_star + 2.0 * system.w_tilde,
        x_star=system.x_star,
        w_tilde=2.0 * system.w_tilde,
    )
    gain, spectrum, params = gain_from_system(system)
    one = predict_asymptotic_error(system, params, spectrum.x)
    two = predict_asymptotic_error(doubled, params, spectrum.x)
    assert np.abs(two.asymptotic - 2.0 * one.asymptotic).max() <= 1e-10


def test_row_space_identity_every_round(small_noisy_system):
    """Projected agent errors differ from raw ones exactly by the noise injection."""
    system = small_noisy_system
    blocks = partition_rows(system)
    projections = [projection_complement(b) for b in blocks]
    noise = system.noise()
    record = run_apc(system, rounds=25, record_agents=True)
    for agents in record.agent_trajectory:
        for block, proj in zip(blocks, projections):
            e_ell = agents[block.index - 1] - system.x_star
            lhs = proj.p @ e_ell
            rhs = e_ell - row_pseudoinverse(block) * noise[block.index - 1]
            assert np.abs(lhs - rhs).max() <= 1e-9


def test_fixed_point_decomposition(small_noisy_system):
    """State minus fixed point is the propagated initial offset."""
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    lim = limit_state(gain, drive)
    offset = d0.d - lim.d
    for t in (1, 5, 20, 50):
        state = closed_form_state(gain, d0, drive, t)
        expected = lim.d + np.linalg.matrix_power(gain.g, t) @ offset
        assert np.abs(state.d - expected).max() <= 1e-9


def test_consensus_transient_decays_at_rate():
    system = conditioned_system(12, 4, kappa=3.0, seed=17)
    blocks, projections, gain, spectrum, params, d0, drive = _setup(system)
    prediction = predict_asymptotic_error(system, params, spectrum.x)
    record = run_apc(system, rounds=40, params=params)
    start = np.linalg.norm(record.trajectory[0][1] - system.x_star - prediction.asymptotic)
    for t in range(1, 41):
        residual = np.linalg.norm(record.trajectory[t][1] - system.x_star - prediction.asymptotic)
        envelope = 10.0 * (t + 1) * params.alpha**t * (start + 1e-12)
        if (t + 1) * params.alpha**t < 1e-12:
            break
        assert residual <= envelope


def test_transient_decay_fit_rate():
    system = conditioned_system(16, 4, kappa=4.0, seed=5)
    blocks, projections, gain, spectrum, params, d0, drive = _setup(system)
    assert params.alpha == pytest.approx(1.0 / 3.0, abs=0.01)
    fit = transient_decay_fit(gain, d0, drive, t_max=60)
    assert abs(fit.slope - np.log(params.alpha)) <= 0.05
    assert not fit.stopped_early


def test_transient_decay_exact_linearity(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    eye = np.eye(gain.dim)
    u = (eye - gain.g) @ d0.d - drive.w_d
    u2 = (eye - gain.g) @ (2.0 * d0.d) - 2.0 * drive.w_d
    assert np.array_equal(u2, 2.0 * u)
    for t in (1, 5, 10):
        v = np.linalg.matrix_power(gain.g, t)
        assert np.array_equal(v @ u2, v @ (2.0 * u))


def test_transient_dies_in_two_rounds_at_unit_kappa():
    rng = np.random.default_rng(8)
    a = np.vstack([np.eye(4), np.eye(4)])  # consensus matrix exactly scalar
    x_star = rng.standard_normal(4)
    w = 0.01 * rng.standard_normal(8)
    system = LinearSystem(a=a, y=a @ x_star + w, x_star=x_star, w_tilde=w)
    blocks, projections, gain, spectrum, params, d0, drive = _setup(system)
    assert params.alpha == 0.0
    eye = np.eye(gain.dim)
    u = (eye - gain.g) @ d0.d - drive.w_d
    assert np.linalg.norm(gain.g @ (gain.g @ u)) <= 1e-13
    with pytest.raises(ValueError):
        transient_decay_fit(gain, d0, drive, t_max=30)


def test_prediction_report_contents(small_noisy_system):
    blocks, projections, gain, spectrum, params, d0, drive = _setup(small_noisy_system)
    report = prediction_report(
        small_noisy_system, params, spectrum.x, gain, blocks, projections, t_max=30
    )
    assert len(report["asymptotic"]) == small_noisy_system.s
    assert len(report["transient_norms"]) == 31
    assert report["alpha"] == params.alpha
    assert report["transient_norms"][-1] <= 1e-6 * (1.0 + report["transient_norms"][0])
    assert report["asymptotic_sq_norm"] >= 0.0
