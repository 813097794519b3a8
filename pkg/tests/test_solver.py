"""Finite element assembly oracles and time-stepping properties."""

import numpy as np
import pytest

from degenlab.domain import GeometrySpec, build_annulus_mesh, build_disk_mesh
from degenlab.solver import (ManufacturedField, ParabolicProblem,
                             assemble_mass, assemble_stiffness, boundary_flux,
                             boundary_mass_matrix, cell_weight_integrals,
                             energy_report, manufactured_source, solve)
from degenlab.weights import RegularizedWeight


@pytest.fixture(scope="module")
def small_mesh():
    return build_disk_mesh(GeometrySpec(R=0.12, L=1.0), 0.1)


class TestAssembly:
    def test_mass_matrix_two_triangles(self, unit_square_mesh):
        # consistent P1 mass of one triangle: (area/12) [[2,1,1],[1,2,1],[1,1,2]]
        M = assemble_mass(unit_square_mesh).toarray()
        sixth = 1.0 / 12.0
        expected = np.zeros((4, 4))
        for tri in ((0, 1, 2), (0, 2, 3)):
            for a in tri:
                for b in tri:
                    expected[a, b] += 0.5 * sixth * (2.0 if a == b else 1.0)
        assert np.allclose(M, expected)

    def test_mass_total_is_area(self, small_mesh):
        M = assemble_mass(small_mesh)
        ones = np.ones(small_mesh.num_vertices)
        assert np.isclose(ones @ (M @ ones), float(np.sum(small_mesh.areas)))

    def test_stiffness_unit_square_laplacian(self, unit_square_mesh):
        # classical 5-point pattern on the 2-triangle square: diagonal 1 at
        # off-diagonal corners, 2 on the shared diagonal, -1/2 side couplings
        A = assemble_stiffness(unit_square_mesh, None).toarray()
        expected = np.array([[1.0, -0.5, 0.0, -0.5],
                             [-0.5, 1.0, -0.5, 0.0],
                             [0.0, -0.5, 1.0, -0.5],
                             [-0.5, 0.0, -0.5, 1.0]])
        assert np.allclose(A, expected)

    def test_stiffness_annihilates_constants(self, small_mesh):
        A = assemble_stiffness(small_mesh, 1.0)
        ones = np.ones(small_mesh.num_vertices)
        assert np.max(np.abs(A @ ones)) < 1e-12

    def test_stiffness_positive_semidefinite(self, unit_square_mesh):
        A = assemble_stiffness(
            unit_square_mesh,
            RegularizedWeight(epsilon=0.5, alpha=1.0)).toarray()
        vals = np.linalg.eigvalsh(A)
        assert np.min(vals) > -1e-12

    def test_cell_weight_integrals_total(self, small_mesh):
        # unweighted integrals recover the cell areas; weighted ones the
        # weighted area
        unw = cell_weight_integrals(small_mesh, None)
        assert np.allclose(unw, small_mesh.areas)
        w = cell_weight_integrals(small_mesh, 1.0)
        assert abs(float(np.sum(w)) - 2.0 * np.pi / 3.0) < 1e-2

    def test_boundary_mass_total_is_perimeter(self, small_mesh):
        B = boundary_mass_matrix(small_mesh)
        ones = np.ones(small_mesh.num_vertices)
        perimeter = float(ones @ (B @ ones))
        e = small_mesh.boundary_edges
        exact = float(np.sum(np.linalg.norm(
            small_mesh.vertices[e[:, 1]] - small_mesh.vertices[e[:, 0]], axis=1)))
        assert np.isclose(perimeter, exact)


class TestTimeStepping:
    def test_zero_data_zero_solution(self, small_mesh):
        data = np.zeros(small_mesh.num_vertices)
        sol = solve(ParabolicProblem(weight=1.0, T=1.0, data=data), small_mesh, 8)
        assert np.all(sol.fields == 0.0)

    def test_l2_monotone_decay_implicit(self, small_mesh):
        rng = np.random.default_rng(0)
        data = rng.normal(size=small_mesh.num_vertices)
        data[small_mesh.boundary_mask] = 0.0
        sol = solve(ParabolicProblem(weight=1.0, T=0.5, data=data),
                    small_mesh, 16, theta=1.0)
        slack = np.min(-np.diff(sol.l2_norms))
        assert slack >= -1e-12

    def test_energy_identity_implicit(self, small_mesh):
        rng = np.random.default_rng(1)
        data = rng.normal(size=small_mesh.num_vertices)
        data[small_mesh.boundary_mask] = 0.0
        sol = solve(ParabolicProblem(weight=1.0, T=0.5, data=data),
                    small_mesh, 12, theta=1.0)
        rep = energy_report(sol)
        assert rep["identity_constant"] <= 1.0 + 1e-8
        assert rep["identity_constant"] >= 1.0 - 1e-8

    def test_backward_is_time_reversed_forward(self, small_mesh):
        rng = np.random.default_rng(2)
        data = rng.normal(size=small_mesh.num_vertices)
        data[small_mesh.boundary_mask] = 0.0
        fwd = solve(ParabolicProblem(weight=1.0, T=0.5, data=data), small_mesh, 8)
        bwd = solve(ParabolicProblem(weight=1.0, T=0.5, data=data,
                                     direction="backward"), small_mesh, 8)
        assert np.allclose(bwd.fields, fwd.fields[::-1])
        assert np.allclose(bwd.fields[-1][~small_mesh.boundary_mask],
                           data[~small_mesh.boundary_mask])
        assert np.allclose(bwd.forward_fields(), fwd.fields)

    def test_invalid_theta_and_steps(self, small_mesh):
        data = np.zeros(small_mesh.num_vertices)
        prob = ParabolicProblem(weight=1.0, T=1.0, data=data)
        with pytest.raises(ValueError):
            solve(prob, small_mesh, 8, theta=0.3)
        with pytest.raises(ValueError):
            solve(prob, small_mesh, 1)

    def test_problem_validation(self):
        with pytest.raises(ValueError):
            ParabolicProblem(weight=1.0, T=1.0, data=np.zeros(3),
                             direction="sideways")
        with pytest.raises(ValueError):
            ParabolicProblem(weight=1.0, T=-1.0, data=np.zeros(3))


class TestManufactured:
    @staticmethod
    def _target():
        return ManufacturedField(
            value=lambda x, t: np.exp(-t) * (1.0 - np.einsum("nd,nd->n", x, x)),
            dt=lambda x, t: -np.exp(-t) * (1.0 - np.einsum("nd,nd->n", x, x)),
            grad=lambda x, t: -2.0 * np.exp(-t) * x,
            lap=lambda x, t: np.full(len(x), -4.0 * np.exp(-t)))

    def test_implicit_first_order(self):
        target = self._target()
        weight = RegularizedWeight(epsilon=0.05, alpha=1.0)
        src = manufactured_source(target, weight)
        spec = GeometrySpec(R=0.12, L=1.0)
        errs = []
        for h, M in ((0.1, 10), (0.05, 20)):
            mesh = build_disk_mesh(spec, h, local_h=min(h / 2.0, 0.0125))
            # boundary values of the target are 0 on |x| = 1 exactly
            data = target.value(mesh.vertices, 0.0)
            sol = solve(ParabolicProblem(weight=weight, T=0.5, data=data,
                                         source=src), mesh, M, theta=1.0)
            times = sol.times
            M_mat = sol.mass
            err2 = np.zeros(len(times))
            for n, t in enumerate(times):
                d = sol.fields[n] - target.value(mesh.vertices, t)
                err2[n] = d @ (M_mat @ d)
            errs.append(np.sqrt(np.trapezoid(err2, times)))
        order = np.log2(errs[0] / errs[1])
        assert order >= 0.9

    def test_exact_weight_needs_origin_flag(self):
        target = self._target()   # does not vanish at the origin
        with pytest.raises(ValueError):
            manufactured_source(target, 0.5)
        # alpha >= 1 and regularized weights are fine
        manufactured_source(target, 1.0)
        manufactured_source(target, RegularizedWeight(epsilon=0.1, alpha=0.5))


class TestBoundaryFlux:
    def test_steady_radial_flux(self):
        # steady u = (r-a)(b-r) with matching source; normal flux a-b on both
        # circles (outward normals point away from the annulus)
        a, b = 4.0, 9.0
        mesh = build_annulus_mesh(a, b, 0.22)

        def source(x, t):
            r = np.linalg.norm(x, axis=1)
            return 2.0 - (a + b) / r + 2.0

        r = np.linalg.norm(mesh.vertices, axis=1)
        data = (r - a) * (b - r)
        data[mesh.boundary_mask] = 0.0
        sol = solve(ParabolicProblem(weight=None, T=0.2, data=data,
                                     source=source), mesh, 10, theta=1.0)
        # the initial datum is already the steady state
        drift = np.max(np.abs(sol.fields[-1] - sol.fields[0]))
        assert drift < 5e-3 * np.max(np.abs(data))
        flux = boundary_flux(sol)
        assert np.max(np.abs(flux[-1] - (a - b))) < 0.03 * (b - a)

    def test_flux_shape(self, small_mesh):
        rng = np.random.default_rng(3)
        data = rng.normal(size=small_mesh.num_vertices)
        data[small_mesh.boundary_mask] = 0.0
        sol = solve(ParabolicProblem(weight=1.0, T=0.5, data=data), small_mesh, 6)
        flux = boundary_flux(sol)
        assert flux.shape == (7, int(np.sum(small_mesh.boundary_mask)))
        assert np.all(np.isfinite(flux))
