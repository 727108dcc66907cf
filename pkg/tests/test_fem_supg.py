import numpy as np
import pytest
from scipy import sparse as sp
from scipy.sparse import linalg as spla

from src.errors import InvalidGeometryError, InvalidParameterError, StabilizationSingularityError
from src.fem.assembly import ElementData, split_operator, stabilization_parameter
from src.fem.benchmarks import (
    GRAETZ_EXTENTS,
    GRAETZ_THETAS,
    assemble_graetz_transformed,
    graetz_scheme,
    poiseuille_field,
    poiseuille_profile,
    square_coefficients,
)
from src.fem.coefficients import (
    AdvectionTerm,
    CoefficientField,
    ScalarTerm,
    SubdomainCoefficients,
    ThetaTable,
    constant,
    constant_vector,
    zero_field,
)
from src.fem.dirichlet import apply_dirichlet, build_dirichlet_handler, constrain, zero_entries
from src.fem.forms import assemble_adjoint_forms, assemble_forms, assemble_state_forms
from src.mesh.triangular_mesh import RegionMask, build_rect_mesh

UNIT = (0.0, 1.0, 0.0, 1.0)
FIXED = ThetaTable({"one": lambda mu: 1.0})


def single_subdomain(gamma: float, eta, speed, forcing=(), labels=("omega",)) -> CoefficientField:
    subdomains = tuple(
        SubdomainCoefficients(
            label=label,
            diffusion_xx=(ScalarTerm("one", constant(gamma)),),
            diffusion_yy=(ScalarTerm("one", constant(gamma)),),
            advection=(AdvectionTerm("one", eta),) if eta is not None else (),
            speed=speed,
            forcing=forcing,
        )
        for label in labels
    )
    return CoefficientField(subdomains=subdomains, thetas=FIXED)


def hat_gradients(corners: np.ndarray) -> np.ndarray:
    """Gradients of the three P1 basis functions from the inverse of the affine interpolation matrix."""
    system = np.column_stack([np.ones(3), corners])
    return np.linalg.inv(system)[1:].T


def test_split_operator_divergence_free_field():
    split = split_operator(poiseuille_field, zero_field)
    points = np.array([[[0.3, 0.4], [0.7, 0.9]]])
    values = np.array([[[0.2, 0.3, 0.5], [0.1, 0.1, 0.8]]])
    gradients = np.array([[[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]]])
    skew = split.skew(values, gradients, points)
    eta = poiseuille_field(points[0])
    np.testing.assert_allclose(skew[0], eta @ gradients[0].T)
    np.testing.assert_allclose(split.symmetric(values, points), 0.0)


def test_split_parts_add_up_to_advection_for_divergent_field():
    field = lambda points: np.column_stack([points[:, 0], np.zeros(points.shape[0])])
    split = split_operator(field, lambda points: np.ones(points.shape[0]))
    points = np.array([[[0.25, 0.5]]])
    values = np.array([[[0.5, 0.25, 0.25]]])
    gradients = np.array([[[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]])
    total = split.skew(values, gradients, points) + split.symmetric(values, points)
    np.testing.assert_allclose(total[0, 0], 0.25 * gradients[0, :, 0])


def test_supg_addition_on_single_cell():
    mesh = build_rect_mesh(UNIT, 1, 1)
    coeffs = single_subdomain(1.0, constant_vector(1.0, 0.0), constant(1.0))
    forms = assemble_state_forms(mesh, coeffs, delta=1.0)
    supg = forms.stiffness_supg.evaluate(FIXED, (1.0, 1.0)).toarray()

    expected = np.zeros((4, 4))
    for tri in mesh.triangles:
        corners = mesh.vertices[tri]
        gx = hat_gradients(corners)[:, 0]
        area = 0.5 * abs(np.linalg.det(np.column_stack([np.ones(3), corners])))
        h = max(np.linalg.norm(corners[i] - corners[j]) for i in range(3) for j in range(i))
        expected[np.ix_(tri, tri)] += h * area * np.outer(gx, gx)
    np.testing.assert_allclose(supg, expected, atol=1e-14)


class TestUnstabilized:
    @pytest.fixture(scope="class")
    def square_matrices(self):
        mesh = build_rect_mesh(UNIT, 6, 6)
        obs = mesh.region_where(lambda points: points[:, 1] > 0.5)
        forms = assemble_forms(mesh, square_coefficients(), 0.0, 0.5, obs)
        return mesh, forms.evaluate((100.0, 0.7))

    def test_zero_delta_removes_stabilization(self, square_matrices):
        _, matrices = square_matrices
        assert spla.norm(matrices.state_mass - matrices.mass) == 0.0
        assert spla.norm(matrices.control + matrices.mass) == 0.0
        assert spla.norm(matrices.observation - matrices.plain_observation) == 0.0

    def test_adjoint_is_transpose(self, square_matrices):
        _, matrices = square_matrices
        assert spla.norm(matrices.adjoint_stiffness - matrices.stiffness.T) == 0.0

    def test_plain_mode_matches_zero_delta(self):
        mesh = build_rect_mesh(UNIT, 4, 4)
        obs = mesh.whole()
        plain = assemble_forms(mesh, square_coefficients(), 1.0, 0.5, obs, mode="plain").evaluate((50.0, 0.3))
        off = assemble_forms(mesh, square_coefficients(), 0.0, 0.5, obs).evaluate((50.0, 0.3))
        assert spla.norm(plain.stiffness - off.stiffness) < 1e-14


@pytest.mark.parametrize("eta,speed", [
    (constant_vector(0.6, 0.8), constant(1.0)),
    (poiseuille_field, poiseuille_profile),
])
def test_divergence_free_advection_is_skew_on_interior(eta, speed):
    mesh = build_rect_mesh(UNIT, 8, 8)
    forms = assemble_state_forms(mesh, single_subdomain(1.0, eta, speed), 0.0, mode="plain")
    diffusion = assemble_state_forms(mesh, single_subdomain(1.0, None, speed), 0.0, mode="plain")
    advection = (forms.stiffness.evaluate(FIXED, ()) - diffusion.stiffness.evaluate(FIXED, ())).toarray()
    interior = np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_vertices(["bottom", "right", "top", "left"]))
    block = (advection + advection.T)[np.ix_(interior, interior)]
    assert np.abs(block).max() <= 1e-10 * np.abs(advection).max()


def test_pure_diffusion_spd_after_elimination():
    mesh = build_rect_mesh(UNIT, 5, 5)
    forms = assemble_state_forms(mesh, single_subdomain(0.3, None, constant(1.0)), 0.0, mode="plain")
    handler = build_dirichlet_handler(mesh, {"bottom": 0.0, "right": 0.0, "top": 0.0, "left": 0.0})
    stiffness = forms.stiffness.evaluate(FIXED, ()).toarray()
    free = handler.free
    np.linalg.cholesky(stiffness[np.ix_(free, free)])


def test_affine_expansion_matches_direct_assembly():
    mesh = build_rect_mesh(UNIT, 6, 6)
    affine = assemble_state_forms(mesh, square_coefficients(), 1.0)
    rng = np.random.default_rng(4)
    for _ in range(20):
        mu = (rng.uniform(1.0, 4e4), rng.uniform(0.9, 1.5))
        direct_coeffs = single_subdomain(1.0 / mu[0], constant_vector(np.cos(mu[1]), np.sin(mu[1])), constant(1.0))
        direct = assemble_state_forms(mesh, direct_coeffs, 1.0)
        a = affine.evaluate(mu)
        d = direct.evaluate(())
        for name in ("stiffness", "state_mass", "control"):
            reference = getattr(d, name)
            assert spla.norm(getattr(a, name) - reference) <= 1e-12 * spla.norm(reference)


def test_manufactured_linear_solution_has_zero_supg_residual():
    mesh = build_rect_mesh(UNIT, 6, 6)
    eta = (0.8, -0.6)
    slope = np.array([2.0, -1.0])
    source = float(np.dot(eta, slope))
    coeffs = single_subdomain(0.01, constant_vector(*eta), constant(1.0),
                              forcing=(ScalarTerm("one", constant(source)),))
    matrices = assemble_state_forms(mesh, coeffs, 1.0).evaluate(())
    exact = mesh.vertices @ slope + 0.5
    interior = np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_vertices(["bottom", "right", "top", "left"]))
    residual = (matrices.stiffness @ exact - matrices.load)[interior]
    assert np.abs(residual).max() <= 1e-10


class TestGraetzTransformation:
    @pytest.fixture(scope="class")
    def mesh(self):
        return build_rect_mesh(GRAETZ_EXTENTS, 8, 4, graetz_scheme())

    def test_theta_values(self):
        mu = (1e5, 1.5)
        assert GRAETZ_THETAS("inv_mu1", mu) == pytest.approx(1e-5)
        assert GRAETZ_THETAS("inv_mu1_mu2", mu) == pytest.approx(1e-5 / 1.5)
        assert GRAETZ_THETAS("mu2_over_mu1", mu) == pytest.approx(1.5e-5)

    def test_identity_map_when_mu2_is_one(self, mesh):
        transformed = assemble_graetz_transformed(mesh, delta=1.0).evaluate((250.0, 1.0))
        coeffs = single_subdomain(1.0 / 250.0, poiseuille_field, poiseuille_profile, labels=("omega1", "omega2"))
        direct = assemble_state_forms(mesh, coeffs, 1.0).evaluate(())
        for name in ("stiffness", "state_mass", "mass"):
            assert spla.norm(getattr(transformed, name) - getattr(direct, name)) < 1e-12

    def test_mass_scales_with_jacobian(self, mesh):
        forms = assemble_graetz_transformed(mesh, delta=0.0)
        for mu2 in (1.0, 2.0, 3.0):
            mass = forms.evaluate((10.0, mu2)).mass
            assert mass.sum() == pytest.approx(1.0 + mu2)

    def test_invalid_mu2(self, mesh):
        with pytest.raises(InvalidParameterError):
            assemble_graetz_transformed(mesh, (1e5, 0.0))

    def test_requires_split_mesh(self):
        with pytest.raises(InvalidParameterError):
            assemble_graetz_transformed(build_rect_mesh(GRAETZ_EXTENTS, 4, 2))


class TestObservation:
    def test_mass_only_on_observed_triangle(self):
        mesh = build_rect_mesh(UNIT, 1, 1)
        obs = RegionMask(np.array([0]), mesh.n_triangles)
        forms = assemble_adjoint_forms(mesh, single_subdomain(1.0, constant_vector(1.0, 0.0), constant(1.0)),
                                       1.0, 0.0, obs)
        matrix = forms.observation_mass.evaluate(FIXED, ()).toarray()
        inside = mesh.triangles[0]
        outside = np.setdiff1d(np.arange(4), inside)
        assert np.all(matrix[outside] == 0.0) and np.all(matrix[:, outside] == 0.0)
        assert matrix[np.ix_(inside, inside)].sum() == pytest.approx(mesh.areas[0])

    def test_zero_desired_state_gives_zero_adjoint_load(self):
        mesh = build_rect_mesh(UNIT, 3, 3)
        coeffs = single_subdomain(1.0, constant_vector(1.0, 0.0), constant(1.0))
        forms = assemble_forms(mesh, coeffs, 1.0, 0.0, mesh.whole())
        handler = build_dirichlet_handler(mesh, {"bottom": 0.0, "right": 0.0, "top": 0.0, "left": 0.0})
        _, correction = apply_dirichlet(forms.evaluate(()), handler, forms.desired_state)
        np.testing.assert_array_equal(correction.adjoint, 0.0)
        np.testing.assert_array_equal(correction.state, 0.0)


class TestDirichlet:
    def test_constant_data_reproduced_in_interior(self):
        mesh = build_rect_mesh(UNIT, 6, 6)
        forms = assemble_state_forms(mesh, single_subdomain(1.0, None, constant(1.0)), 0.0, mode="plain")
        handler = build_dirichlet_handler(mesh, {"bottom": 1.0, "right": 1.0, "top": 1.0, "left": 1.0})
        constrained, correction = apply_dirichlet(forms.evaluate(()), handler)
        y_bar = spla.spsolve(constrained.stiffness.tocsc(), constrained.load + correction.state)
        np.testing.assert_allclose(handler.lift(y_bar), 1.0, atol=1e-12)

    def test_graetz_lifting_is_one_on_heated_walls(self, graetz_steady):
        mesh, lifting = graetz_steady.mesh, graetz_steady.handler.lifting
        heated = mesh.boundary_vertices(["gamma2", "gamma4"])
        cold = np.setdiff1d(mesh.boundary_vertices(["gamma1", "gamma5", "gamma6"]), heated)
        np.testing.assert_array_equal(lifting[heated], 1.0)
        np.testing.assert_array_equal(lifting[cold], 0.0)
        outflow_only = np.setdiff1d(mesh.boundary_vertices(["gamma3"]), graetz_steady.handler.dofs)
        assert outflow_only.size > 0
        np.testing.assert_array_equal(lifting[outflow_only], 0.0)

    def test_constrain_keeps_diagonal(self):
        matrix = sp.csr_matrix(np.arange(1.0, 10.0).reshape(3, 3))
        constrained = constrain(matrix, np.array([1]), 1.0).toarray()
        np.testing.assert_array_equal(constrained[1], [0.0, 1.0, 0.0])
        np.testing.assert_array_equal(constrained[:, 1], [0.0, 1.0, 0.0])
        np.testing.assert_array_equal(zero_entries(np.ones(3), np.array([2])), [1.0, 1.0, 0.0])

    def test_missing_boundary_data_rejected(self):
        mesh = build_rect_mesh(UNIT, 2, 2)
        with pytest.raises(InvalidGeometryError):
            build_dirichlet_handler(mesh, {"bottom": 0.0})


def test_negative_delta_rejected():
    mesh = build_rect_mesh(UNIT, 2, 2)
    with pytest.raises(InvalidParameterError):
        assemble_state_forms(mesh, square_coefficients(), -1.0)


def test_non_finite_speed_rejected():
    mesh = build_rect_mesh(UNIT, 2, 2)
    data = ElementData(mesh)
    with pytest.raises(StabilizationSingularityError):
        stabilization_parameter(data, np.arange(mesh.n_triangles), 1.0,
                                lambda points: np.full(points.shape[0], np.nan))
