import numpy as np
import pytest
import sympy

import stochage as sa
from stochage.errors import ConfigurationError, NoiseMagnitudeError
from stochage.grid import Face
from stochage.noise import evaluate_noise
from stochage.rescale import build_coefficients, rescale_constants

from conftest import build_model, linear_rates


class TestTransforms:
    def test_identity_at_zero_noise(self, grid1d):
        rng = np.random.default_rng(0)
        y = sa.Field(rng.normal(size=grid1d.field_shape), grid1d)
        w = np.zeros(grid1d.field_shape)
        assert np.array_equal(sa.forward_transform(y, w).values, y.values)

    def test_log2_scaling(self, grid1d):
        y = sa.Field.constant(grid1d, 3.0)
        w = np.full(grid1d.field_shape, np.log(2.0))
        p = sa.forward_transform(y, w)
        assert np.allclose(p.values, 6.0, rtol=1e-15)

    def test_round_trip(self, grid1d):
        rng = np.random.default_rng(1)
        y = sa.Field(rng.normal(size=grid1d.field_shape), grid1d)
        w = rng.normal(scale=0.5, size=grid1d.field_shape)
        back = sa.backward_transform(sa.forward_transform(y, w), w)
        assert np.allclose(back.values, y.values, rtol=1e-14)

    def test_zero_density_maps_to_zero(self, grid1d):
        p = sa.Field.zeros(grid1d)
        w = np.random.default_rng(2).normal(size=grid1d.field_shape)
        assert np.all(sa.backward_transform(p, w).values == 0.0)

    def test_overflow_guard(self, grid1d):
        y = sa.Field.constant(grid1d, 1.0)
        w = np.full(grid1d.field_shape, 701.0)
        with pytest.raises(NoiseMagnitudeError) as err:
            sa.forward_transform(y, w)
        assert err.value.w_max == pytest.approx(701.0)


class TestCoefficients:
    def test_zero_noise_identity_reduction(self, grid1d):
        model = build_model(grid1d, rates=linear_rates(k0=0.3),
                            amplitudes=(sa.constant_amplitude(0.0, 1),))
        bundle = sa.sample_bundle(0, 1, grid1d.n_t, grid1d.T)
        coeffs = build_coefficients(model, bundle)
        i = grid1d.n_t // 2
        assert np.all(coeffs.g1(i) == 0.0)
        assert np.all(coeffs.g2(i)[0] == 0.0)
        assert np.all(coeffs.exp_w(i) == 1.0)
        face = Face(0, 0)
        assert np.array_equal(coeffs.k_face(face, i), coeffs.k0_face(face, i))
        u = 1.23
        m0_direct = 0.6 * np.ones(grid1d.field_shape)
        assert np.array_equal(coeffs.m_values(i, u), m0_direct)

    def test_age_linear_mode(self, grid1d):
        # mu(a) = a: g1 = b + a^2/2, g2 = 0
        model = build_model(grid1d,
                            amplitudes=(sa.age_polynomial_amplitude((0.0, 1.0), 1),))
        bundle = sa.sample_bundle(3, 1, grid1d.n_t, grid1d.T)
        i = 11
        b = bundle.betas[0, i]
        coeffs = build_coefficients(model, bundle)
        g1 = coeffs.g1(i)
        ages = grid1d.age_mesh
        assert np.allclose(g1, b + ages ** 2 / 2, rtol=1e-13)
        assert np.all(coeffs.g2(i)[0] == 0.0)

    def test_advection_normal_component_vanishes_on_boundary(self, grid1d):
        # compatible amplitudes have zero normal derivative on the box, so
        # the first-order coefficient has no flux through the boundary
        spec = sa.NoiseSpec((sa.cosine_amplitude(0.4, (3,), grid1d.extent),))
        bundle = sa.sample_bundle(7, 1, grid1d.n_t, grid1d.T)
        from stochage.grid import boundary_faces, face_meshes
        for face in boundary_faces(grid1d):
            ages, coords = face_meshes(grid1d, face)
            for amp in spec.amplitudes:
                g = amp.grad[face.axis](ages, *coords)
                assert np.max(np.abs(np.asarray(g) * bundle.betas[0, -1])) <= 1e-12

    def test_cosine_mode_against_symbolic_oracle(self):
        # independent derivation of g1 and g2 via sympy
        grid = sa.Grid(T=0.5, a_max=1.0, n_t=16, n_a=32, extent=(1.0,), n_x=(12,))
        c, k = 0.4, 2
        model = build_model(grid, amplitudes=(sa.cosine_amplitude(c, (k,), (1.0,)),))
        bundle = sa.sample_bundle(5, 1, grid.n_t, grid.T)
        i = 9
        beta = bundle.betas[0, i]

        x = sympy.symbols("x")
        mu_sym = c * sympy.cos(k * sympy.pi * x)
        w_sym = mu_sym * beta
        g1_sym = (-sympy.diff(w_sym, x, 2) - sympy.diff(w_sym, x) ** 2
                  + sympy.Rational(1, 2) * mu_sym ** 2)
        g2_sym = -2 * sympy.diff(w_sym, x)
        g1_fn = sympy.lambdify(x, g1_sym, "numpy")
        g2_fn = sympy.lambdify(x, g2_sym, "numpy")

        coeffs = build_coefficients(model, bundle)
        xs = grid.cell_centers[0]
        assert np.allclose(coeffs.g1(i)[0], g1_fn(xs), rtol=1e-12)
        assert np.allclose(coeffs.g2(i)[0][0], g2_fn(xs), rtol=1e-12)

    def test_boundary_datum_rescaled(self, grid1d):
        model = build_model(grid1d, rates=linear_rates(k0=0.5),
                            amplitudes=(sa.constant_amplitude(0.3, 1),))
        bundle = sa.sample_bundle(8, 1, grid1d.n_t, grid1d.T)
        i = 13
        beta = bundle.betas[0, i]
        coeffs = build_coefficients(model, bundle)
        face = Face(0, 1)
        expected = 0.5 * np.exp(-0.3 * beta)
        assert np.allclose(coeffs.k_face(face, i), expected, rtol=1e-14)

    def test_fertility_transform_age_mode(self, grid1d):
        # m = m0 exp(W(a) - W(0)) with W = a b: factor exp(a b)
        model = build_model(grid1d,
                            amplitudes=(sa.age_polynomial_amplitude((0.0, 1.0), 1),))
        bundle = sa.sample_bundle(4, 1, grid1d.n_t, grid1d.T)
        i = 6
        b = bundle.betas[0, i]
        coeffs = build_coefficients(model, bundle)
        m = coeffs.m_values(i, 0.0)
        expected = 0.6 * np.exp(grid1d.age_mesh * b)
        assert np.allclose(m, np.broadcast_to(expected, grid1d.field_shape), rtol=1e-13)

    def test_incompatible_bundle_rejected(self, grid1d):
        model = build_model(grid1d)
        bundle = sa.sample_bundle(0, 1, grid1d.n_t * 2, grid1d.T)
        with pytest.raises(ConfigurationError):
            build_coefficients(model, bundle)

    def test_mode_count_mismatch_rejected(self, grid1d):
        model = build_model(grid1d)
        bundle = sa.sample_bundle(0, 3, grid1d.n_t, grid1d.T)
        with pytest.raises(ConfigurationError):
            build_coefficients(model, bundle)


class TestConstants:
    def test_zero_noise(self, grid1d):
        model = build_model(grid1d, amplitudes=(sa.constant_amplitude(0.0, 1),))
        bundle = sa.sample_bundle(0, 1, grid1d.n_t, grid1d.T)
        consts = rescale_constants(model, bundle)
        assert consts.c_w0 == 1.0
        assert consts.c_w == 1.0
        assert consts.m_inf == pytest.approx(model.rates.m0_inf)

    def test_age_linear_monotone(self, grid1d):
        # W = a b: sup over (a, t) of exp(W - W(0-row)) is exp(a_max * max b+)
        model = build_model(grid1d,
                            amplitudes=(sa.age_polynomial_amplitude((0.0, 1.0), 1),))
        bundle = sa.sample_bundle(12, 1, grid1d.n_t, grid1d.T)
        consts = rescale_constants(model, bundle)
        beta_max = bundle.betas[0].max()
        expected = np.exp(grid1d.a_max * max(beta_max, 0.0))
        assert consts.c_w0 == pytest.approx(expected, rel=1e-12)
        assert consts.m_inf == pytest.approx(consts.c_w0 * 0.6, rel=1e-14)


class TestItoConsistency:
    def test_geometric_brownian_motion_exact(self):
        """Pure multiplicative noise, one cell: the rescaled route gives the
        closed-form answer exactly (decay factors multiply into exp(-t/2)
        and the transform restores exp(beta)).
        """
        n_t = 256
        grid = sa.Grid(T=0.5, a_max=1.0, n_t=n_t, n_a=2 * n_t,
                       extent=(1.0,), n_x=(1,))
        rates = sa.VitalRates()
        model = build_model(grid, rates=rates,
                            amplitudes=(sa.constant_amplitude(1.0, 1),),
                            p0=sa.initial_field(grid, lambda a, x: np.full(
                                np.broadcast_shapes(np.shape(a), np.shape(x)), 2.0)))
        bundle = sa.sample_bundle(17, 1, n_t, 0.5)
        rep = sa.solve_rescaled(model, bundle, sa.SolverConfig(snapshot_stride=0))
        # probe an age row the zero inflow from the birth boundary has not
        # reached: a > T there, so the value is the scalar solution
        y_probe = rep.final[-1, 0]
        assert y_probe == pytest.approx(2.0 * np.exp(-0.5 / 2), rel=1e-12)
        nf = evaluate_noise(model.noise, bundle, n_t, grid)
        p_probe = np.exp(nf.value[-1, 0]) * y_probe
        exact = 2.0 * np.exp(bundle.betas[0, -1] - 0.5 / 2)
        assert p_probe == pytest.approx(exact, rel=1e-12)
