import math

import numpy as np
import pytest

from polarsim.channel import (
    E_HORIZONTAL,
    E_VERTICAL,
    GainPattern,
    ISOTROPIC,
    PhysicalConstants,
    TGPP_ELEMENT,
    UserState,
    dual_pol_response,
    effective_gain,
    polarformed_channel,
    polarization_basis,
    receive_projection,
    stacked_channel,
    steering_vector,
    transmit_projection,
    unpolarformed_los_channel,
)
from polarsim.geometry import (
    RotationAngles,
    SubarrayLayout,
    SubarrayPose,
    ZERO_ROTATION,
    rotation_matrix,
)

WAVELENGTH = 0.0125


def random_rotation(rng):
    return RotationAngles(*rng.uniform(0.0, 2.0 * math.pi, size=3))


def random_direction(rng):
    theta = math.asin(rng.uniform(-1.0, 1.0))
    phi = rng.uniform(-math.pi, math.pi)
    return theta, phi


def consts(sigma2=1e-9):
    return PhysicalConstants(WAVELENGTH, 1.0, sigma2, 1.0)


class TestSteeringVector:
    def test_single_antenna_at_origin(self):
        layout = SubarrayLayout(np.zeros((1, 3)))
        pose = SubarrayPose(np.zeros(3), ZERO_ROTATION)
        a = steering_vector(pose, layout, np.array([1.0, 0.0, 0.0]), WAVELENGTH)
        assert np.allclose(a, [1.0 + 0.0j])

    def test_half_wavelength_pair_broadside(self):
        layout = SubarrayLayout(np.array([[0.0, 0.0, 0.0], [0.0, WAVELENGTH / 2, 0.0]]))
        pose = SubarrayPose(np.zeros(3), ZERO_ROTATION)
        a = steering_vector(pose, layout, np.array([0.0, 1.0, 0.0]), WAVELENGTH)
        assert np.allclose(a, [1.0, -1.0], atol=1e-12)

    def test_constant_modulus(self):
        rng = np.random.default_rng(11)
        layout = SubarrayLayout.upa(4, WAVELENGTH / 2)
        for _ in range(50):
            pose = SubarrayPose(rng.uniform(-0.5, 0.5, 3), random_rotation(rng))
            f = rng.standard_normal(3)
            f /= np.linalg.norm(f)
            a = steering_vector(pose, layout, f, WAVELENGTH)
            assert np.max(np.abs(np.abs(a) - 1.0)) <= 1e-12


class TestEffectiveGain:
    def test_isotropic_everywhere(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            f = rng.standard_normal(3)
            f /= np.linalg.norm(f)
            assert effective_gain(random_rotation(rng), f, ISOTROPIC) == 1.0

    def test_sector_pattern_boresight(self):
        assert effective_gain(ZERO_ROTATION, np.array([0.0, 0.0, 1.0]), TGPP_ELEMENT) == (
            pytest.approx(10.0**0.8)
        )

    def test_sector_pattern_back_lobe_floor(self):
        g = effective_gain(ZERO_ROTATION, np.array([0.0, 0.0, -1.0]), TGPP_ELEMENT)
        assert g == pytest.approx(10.0 ** ((8.0 - 30.0) / 10.0))

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(13)
        dirs = rng.standard_normal((40, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rows = TGPP_ELEMENT.gain_dbi_rows(dirs)
        scalars = [TGPP_ELEMENT.gain_dbi(d) for d in dirs]
        assert np.allclose(rows, scalars, atol=1e-12)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            GainPattern("cardioid")


class TestUnpolarformedChannel:
    def test_path_loss_at_reference_scale(self):
        layout = SubarrayLayout(np.zeros((1, 3)))
        pose = SubarrayPose(np.zeros(3), ZERO_ROTATION)
        user = UserState(0.0, 0.0, 1.0 + 1e-9, ZERO_ROTATION)
        h = unpolarformed_los_channel(user, pose, layout, consts(), ISOTROPIC)
        assert abs(h[0]) == pytest.approx(1.0, rel=1e-6)

    def test_inverse_square_law(self):
        layout = SubarrayLayout.upa(4, WAVELENGTH / 2)
        pose = SubarrayPose(np.array([0.2, 0.1, 0.0]), ZERO_ROTATION)
        h1 = unpolarformed_los_channel(UserState(0.3, 0.4, 30.0, ZERO_ROTATION), pose, layout, consts(), ISOTROPIC)
        h2 = unpolarformed_los_channel(UserState(0.3, 0.4, 60.0, ZERO_ROTATION), pose, layout, consts(), ISOTROPIC)
        assert np.linalg.norm(h1) == pytest.approx(2.0 * np.linalg.norm(h2), rel=1e-12)

    def test_constant_modulus_entries(self):
        rng = np.random.default_rng(14)
        layout = SubarrayLayout.upa(4, WAVELENGTH / 2)
        for _ in range(30):
            pose = SubarrayPose(rng.uniform(-0.5, 0.5, 3), random_rotation(rng))
            theta, phi = random_direction(rng)
            user = UserState(theta, phi, rng.uniform(2, 100), random_rotation(rng))
            h = unpolarformed_los_channel(user, pose, layout, consts(), TGPP_ELEMENT)
            nu = 1.0 / user.distance**2
            g = effective_gain(pose.u, user.pointing, TGPP_ELEMENT)
            assert np.max(np.abs(np.abs(h) - math.sqrt(nu * g))) <= 1e-12

    def test_rejects_reference_distance(self):
        with pytest.raises(ValueError):
            UserState(0.0, 0.0, 0.5, ZERO_ROTATION)


def reference_dual_pol(u_b, u_r, theta, phi):
    """Entrywise dot-product construction, independent of the library path."""
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(phi), math.cos(phi)
    z = np.array([st * sp, -ct, st * cp])
    zb = np.array([cp, 0.0, -sp])
    rb, rr = rotation_matrix(u_b), rotation_matrix(u_r)
    p = np.empty((2, 2))
    q = np.empty((2, 2))
    for col, axis in enumerate((E_VERTICAL, E_HORIZONTAL)):
        tx = rb @ axis
        p[0, col] = sum(tx[i] * z[i] for i in range(3))
        p[1, col] = sum(tx[i] * zb[i] for i in range(3))
    for row, axis in enumerate((E_VERTICAL, E_HORIZONTAL)):
        rx = rr @ axis
        q[row, 0] = sum(z[i] * rx[i] for i in range(3))
        q[row, 1] = sum(zb[i] * rx[i] for i in range(3))
    return q @ p


class TestDualPolResponse:
    def test_reference_frame_projections(self):
        p = transmit_projection(ZERO_ROTATION, 0.0, 0.0)
        q = receive_projection(ZERO_ROTATION, 0.0, 0.0)
        assert np.allclose(p, [[-1.0, 0.0], [0.0, 1.0]])
        assert np.allclose(q, [[-1.0, 0.0], [0.0, 1.0]])
        assert np.allclose(dual_pol_response(ZERO_ROTATION, ZERO_ROTATION, 0.0, 0.0), np.eye(2))

    def test_matches_entrywise_oracle(self):
        rng = np.random.default_rng(15)
        for _ in range(200):
            u_b, u_r = random_rotation(rng), random_rotation(rng)
            theta, phi = random_direction(rng)
            got = dual_pol_response(u_b, u_r, theta, phi)
            assert np.allclose(got, reference_dual_pol(u_b, u_r, theta, phi), atol=1e-12)
            assert np.max(np.abs(got.imag)) == 0.0

    def test_entries_bounded_by_unit_dot_products(self):
        rng = np.random.default_rng(16)
        for _ in range(100):
            theta, phi = random_direction(rng)
            p = transmit_projection(random_rotation(rng), theta, phi)
            q = receive_projection(random_rotation(rng), theta, phi)
            assert np.max(np.abs(p)) <= 1.0 + 1e-12
            assert np.max(np.abs(q)) <= 1.0 + 1e-12

    def test_orthogonal_when_frames_share_wavefront_plane(self):
        # rotations about the propagation axis keep both element planes in
        # the wavefront plane, making the combined response orthogonal
        rng = np.random.default_rng(17)
        for _ in range(20):
            u = RotationAngles(0.0, 0.0, rng.uniform(0, 2 * math.pi))
            a = dual_pol_response(u, u, 0.0, 0.0)
            assert np.allclose(a.conj().T @ a, np.eye(2), atol=1e-12)

    def test_invariant_under_full_turns(self):
        rng = np.random.default_rng(18)
        for _ in range(30):
            u_b, u_r = random_rotation(rng), random_rotation(rng)
            theta, phi = random_direction(rng)
            shifted = RotationAngles(u_b.alpha + 2 * math.pi, u_b.beta, u_b.gamma)
            assert np.allclose(
                dual_pol_response(u_b, u_r, theta, phi),
                dual_pol_response(shifted, u_r, theta, phi),
                atol=1e-12,
            )

    def test_wave_components_orthonormal(self):
        rng = np.random.default_rng(19)
        for _ in range(50):
            theta, phi = random_direction(rng)
            z, zb = polarization_basis(theta, phi)
            assert abs(np.linalg.norm(z) - 1) <= 1e-12
            assert abs(np.linalg.norm(zb) - 1) <= 1e-12
            assert abs(z @ zb) <= 1e-12


class TestPolarformedChannel:
    def test_identity_response_scales_by_inner_product(self):
        rng = np.random.default_rng(20)
        h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        v = np.full(2, 1.0 / math.sqrt(2.0))
        w = np.array([1.0, 0.0])
        assert np.allclose(polarformed_channel(h, np.eye(2), v, w), h * (v.conj() @ w))

    def test_zero_receive_vector_kills_channel(self):
        rng = np.random.default_rng(21)
        h = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        a = rng.standard_normal((2, 2))
        assert np.allclose(polarformed_channel(h, a, np.array([1.0, 1.0]), np.zeros(2)), 0.0)

    def test_factored_equals_kronecker_form(self):
        rng = np.random.default_rng(22)
        n = 4
        for _ in range(300):
            h = rng.standard_normal(n) + 1j * rng.standard_normal(n)
            a = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
            v = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
            fac = polarformed_channel(h, a, v, w)
            kron = np.kron(np.eye(n), v.conj().reshape(1, 2)) @ np.kron(h.reshape(n, 1), a) @ w
            assert np.linalg.norm(fac - kron) <= 1e-12 * max(np.linalg.norm(kron), 1e-30)


class TestStackedChannel:
    def _setup(self, rng, n_sub=3):
        layout = SubarrayLayout.upa(4, WAVELENGTH / 2)
        poses = [
            SubarrayPose(rng.uniform(-0.5, 0.5, 3), random_rotation(rng)) for _ in range(n_sub)
        ]
        v_list = [rng.standard_normal(2) + 1j * rng.standard_normal(2) for _ in range(n_sub)]
        w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        theta, phi = random_direction(rng)
        user = UserState(theta, phi, rng.uniform(10, 100), random_rotation(rng))
        return user, poses, layout, v_list, w

    def test_single_subarray_matches_block(self):
        rng = np.random.default_rng(23)
        user, poses, layout, v_list, w = self._setup(rng, n_sub=1)
        stacked = stacked_channel(user, poses, layout, v_list, w, consts(), TGPP_ELEMENT)
        h = unpolarformed_los_channel(user, poses[0], layout, consts(), TGPP_ELEMENT)
        a = dual_pol_response(poses[0].u, user.rotation, user.theta, user.phi)
        assert np.allclose(stacked, polarformed_channel(h, a, v_list[0], w))

    def test_permutation_permutes_blocks(self):
        rng = np.random.default_rng(24)
        user, poses, layout, v_list, w = self._setup(rng)
        base = stacked_channel(user, poses, layout, v_list, w, consts(), TGPP_ELEMENT)
        perm = stacked_channel(
            user, poses[::-1], layout, v_list[::-1], w, consts(), TGPP_ELEMENT
        )
        n = layout.n_antennas
        blocks = [base[i * n : (i + 1) * n] for i in range(3)]
        assert np.allclose(perm, np.concatenate(blocks[::-1]))

    def test_norm_adds_over_blocks(self):
        rng = np.random.default_rng(25)
        user, poses, layout, v_list, w = self._setup(rng)
        total = stacked_channel(user, poses, layout, v_list, w, consts(), TGPP_ELEMENT)
        parts = [
            stacked_channel(user, [p], layout, [v], w, consts(), TGPP_ELEMENT)
            for p, v in zip(poses, v_list)
        ]
        assert np.linalg.norm(total) ** 2 == pytest.approx(
            sum(np.linalg.norm(p) ** 2 for p in parts), rel=1e-12
        )


class TestPhysicalConstants:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            PhysicalConstants(0.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            PhysicalConstants(1.0, 1.0, -1.0, 1.0)

    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            PhysicalConstants(1.0, 1.0, 1.0, 1.0, rho_weights=np.array([1.0, 0.0]))
