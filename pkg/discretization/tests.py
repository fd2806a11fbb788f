import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy import integrate

from discretization.dg import (
    DgSpace,
    PenaltyConfig,
    assemble_flux,
    assemble_iipg,
    assemble_rhs,
    assemble_sym,
    default_source,
    error_norms,
    exact_solution,
    export_system,
    interpolate,
    triangle_rule,
)
from discretization.mesh import (
    TriMesh,
    build_nesting,
    build_skeleton,
    build_structured,
    dump_mesh,
)
from linalg.exceptions import DimensionMismatch
from linalg.matrix_market import read_matrix_market
from linalg.sparse import lu_factor, lu_solve


class StructuredMeshTests(SimpleTestCase):
    def test_level_one_counts(self):
        mesh, skeleton = build_structured(1)
        self.assertEqual(mesh.n_triangles, 8)
        self.assertEqual(skeleton.n_edges, 16)
        self.assertEqual(int(skeleton.boundary.sum()), 8)

    def test_level_one_tiles_the_square(self):
        mesh, _ = build_structured(1)
        self.assertEqual(mesh.signed_areas.sum(), 1.0)
        np.testing.assert_array_equal(mesh.signed_areas, np.full(8, 0.125))

    def test_fine_level_spacing(self):
        mesh, _ = build_structured(7)
        self.assertEqual(mesh.h, 2.0 ** -7)
        self.assertEqual(mesh.n_triangles, 2 * 128 ** 2)

    def test_level_out_of_range(self):
        for level in (0, 13, -1, 2.5):
            with self.assertRaises(ValueError):
                build_structured(level)

    def test_vertices_on_grid(self):
        mesh, _ = build_structured(3)
        np.testing.assert_array_equal(mesh.vertices / mesh.h, np.round(mesh.vertices / mesh.h))
        # row-major: x runs fastest
        np.testing.assert_array_equal(mesh.vertices[1], [mesh.h, 0.0])
        np.testing.assert_array_equal(mesh.vertices[9], [0.0, mesh.h])

    def test_skeleton_invariants(self):
        mesh, sk = build_structured(3)
        h = mesh.h
        np.testing.assert_allclose(np.hypot(sk.normal[:, 0], sk.normal[:, 1]), 1.0, atol=1e-15)
        self.assertAlmostEqual(sk.length[sk.boundary].sum(), 4.0, delta=1e-12)
        on_grid = np.isclose(sk.length, h, atol=1e-15) | np.isclose(sk.length, h * math.sqrt(2.0), atol=1e-15)
        self.assertTrue(on_grid.all())
        self.assertTrue(np.all(sk.plus[sk.interior] < sk.minus[sk.interior]))

        # normals point out of the plus element
        midpoints = sk.endpoints.mean(axis=1)
        outward = np.einsum("ed,ed->e", midpoints - mesh.barycenters[sk.plus], sk.normal)
        self.assertTrue(np.all(outward > 0))

    def test_interior_edges_shared_by_both_elements(self):
        mesh, sk = build_structured(2)
        for e in np.flatnonzero(sk.interior):
            shared = set(mesh.triangles[sk.plus[e]]) & set(mesh.triangles[sk.minus[e]])
            self.assertEqual(shared, set(sk.vertex_pairs[e]))

    def test_flipped_skeleton(self):
        _, sk = build_structured(2)
        flipped = sk.flipped()
        inner = sk.interior
        np.testing.assert_array_equal(flipped.plus[inner], sk.minus[inner])
        np.testing.assert_array_equal(flipped.normal[inner], -sk.normal[inner])
        np.testing.assert_array_equal(flipped.normal[~inner], sk.normal[~inner])

    def test_dump_mesh(self):
        mesh, _ = build_structured(1)
        with tempfile.TemporaryDirectory() as tmp:
            path = dump_mesh(mesh, Path(tmp) / "mesh.txt")
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0].split(), ["1", "0.5", "9", "8"])
        self.assertEqual(sum(line.startswith("v ") for line in lines), 9)
        self.assertEqual(lines[-1].split()[:2], ["t", "7"])


class NestingTests(SimpleTestCase):
    def test_one_level_refinement(self):
        fine, _ = build_structured(3)
        coarse, _ = build_structured(2)
        nesting = build_nesting(fine, coarse)
        np.testing.assert_array_equal(np.bincount(nesting.parent, minlength=coarse.n_triangles), 4)

    def test_two_level_gap(self):
        fine, _ = build_structured(7)
        coarse, _ = build_structured(5)
        nesting = build_nesting(fine, coarse)
        np.testing.assert_array_equal(np.bincount(nesting.parent, minlength=coarse.n_triangles), 16)

    def test_barycenters_inside_parents(self):
        fine, _ = build_structured(4)
        coarse, _ = build_structured(2)
        nesting = build_nesting(fine, coarse)
        p = coarse.corners[nesting.parent]
        x = fine.barycenters
        for k in range(3):
            a, b = p[:, k], p[:, (k + 1) % 3]
            cross = (b[:, 0] - a[:, 0]) * (x[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (x[:, 0] - a[:, 0])
            self.assertTrue(np.all(cross >= -1e-14))
        np.testing.assert_array_equal(nesting.children(0).size, 16)

    def test_identical_levels_rejected(self):
        mesh, _ = build_structured(3)
        with self.assertRaises(ValueError):
            build_nesting(mesh, mesh)

    def test_coarse_edges_are_unions_of_fine_edges(self):
        _, fine_sk = build_structured(4)
        _, coarse_sk = build_structured(2)
        for a, b in coarse_sk.endpoints:
            t = b - a
            rel_a = fine_sk.endpoints[:, 0] - a
            rel_b = fine_sk.endpoints[:, 1] - a
            collinear = (np.abs(t[0] * rel_a[:, 1] - t[1] * rel_a[:, 0]) < 1e-14) & \
                        (np.abs(t[0] * rel_b[:, 1] - t[1] * rel_b[:, 0]) < 1e-14)
            sa = rel_a @ t / (t @ t)
            sb = rel_b @ t / (t @ t)
            inside = collinear & (np.minimum(sa, sb) >= -1e-14) & (np.maximum(sa, sb) <= 1 + 1e-14)
            self.assertEqual(int(inside.sum()), 4)
            self.assertAlmostEqual(fine_sk.length[inside].sum(), np.hypot(*t), delta=1e-14)


def _single_triangle_space():
    mesh = TriMesh(
        level=0,
        h=1.0,
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        triangles=np.array([[0, 1, 2]]),
    )
    return DgSpace(mesh, build_skeleton(mesh))


class AssemblyTests(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.space = DgSpace.structured(3)
        cls.A = assemble_iipg(cls.space, eta=5.0)
        cls.A0 = assemble_sym(cls.space, eta0=5.0)
        cls.F = assemble_flux(cls.space)

    def test_space_layout(self):
        self.assertEqual(self.space.total_dofs, 3 * 128)
        np.testing.assert_array_equal(self.space.element_dofs[5], [15, 16, 17])

    def test_iipg_is_nonsymmetric(self):
        self.assertGreater(abs(self.A - self.A.T).max(), 0.0)

    def test_flux_term_carries_the_asymmetry(self):
        lhs = (self.A - self.A.T).toarray()
        rhs = (self.F - self.F.T).toarray()
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_operator_minus_symmetric_form_is_the_flux(self):
        scale = abs(self.A).max()
        np.testing.assert_allclose((self.A - self.A0).toarray(), self.F.toarray(), atol=1e-14 * scale)

    def test_symmetric_form_is_bit_symmetric(self):
        self.assertEqual(abs(self.A0 - self.A0.T).max(), 0.0)

    def test_symmetric_form_is_spd(self):
        np.linalg.cholesky(self.A0.toarray())

    def test_symmetric_part_is_positive_definite(self):
        dense = self.A.toarray()
        self.assertGreater(np.linalg.eigvalsh(0.5 * (dense + dense.T)).min(), 0.0)

    def test_convention_invariance(self):
        flipped = DgSpace(self.space.mesh, self.space.skeleton.flipped())
        scale = abs(self.A).max()
        np.testing.assert_allclose(
            assemble_iipg(flipped, eta=5.0).toarray(), self.A.toarray(), atol=1e-14 * scale
        )

    def test_operator_is_nonsingular_on_every_small_level(self):
        for level in (1, 2, 3, 4):
            lu_factor(assemble_iipg(DgSpace.structured(level), eta=5.0))

    def test_single_triangle_diagonal(self):
        space = _single_triangle_space()
        eta = 5.0
        # gradient term (1, 1/2, 1/2), penalty 2η/3 per vertex, flux (-1, -1/2, -1/2)
        np.testing.assert_allclose(assemble_sym(space, eta).diagonal(), [1 + 2 * eta / 3, 0.5 + 2 * eta / 3, 0.5 + 2 * eta / 3], rtol=1e-14)
        np.testing.assert_allclose(assemble_iipg(space, eta).diagonal(), np.full(3, 2 * eta / 3), rtol=1e-14)

    def test_penalty_must_be_positive(self):
        with self.assertRaises(ValueError):
            assemble_iipg(self.space, eta=0.0)
        with self.assertRaises(ValueError):
            assemble_sym(self.space, eta0=-1.0)
        with self.assertRaises(ValueError):
            PenaltyConfig(eta=5.0, eta0=0.0)

    def test_coarse_penalty_rule(self):
        coarse = PenaltyConfig(eta=5.0, eta0=5.0).coarse(7, 5)
        self.assertEqual(coarse.eta, 20.0)
        self.assertEqual(coarse.eta0, 20.0)


class QuadratureTests(SimpleTestCase):
    def test_weights_sum_to_one(self):
        for degree in (4, 6, 10):
            _, weights = triangle_rule(degree)
            self.assertAlmostEqual(weights.sum(), 1.0, delta=1e-14)

    def test_degree_four_monomials(self):
        # ∫ over the reference triangle of x^a y^b = a! b! / (a + b + 2)!
        for degree in (4, 10):
            bary, weights = triangle_rule(degree)
            x, y = bary[:, 1], bary[:, 2]
            for a in range(5):
                for b in range(5 - a):
                    exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
                    self.assertAlmostEqual(0.5 * weights @ (x ** a * y ** b), exact, delta=1e-13)


class LoadVectorTests(SimpleTestCase):
    def test_total_load(self):
        rhs = assemble_rhs(DgSpace.structured(6))
        self.assertTrue(np.all(np.isfinite(rhs)))
        self.assertLess(abs(rhs.sum() - 8.0), 1e-6)

    def test_unit_source_integrates_to_area(self):
        rhs = assemble_rhs(DgSpace.structured(4), source=lambda x, y: np.ones_like(x))
        self.assertAlmostEqual(rhs.sum(), 1.0, delta=1e-13)
        self.assertAlmostEqual(rhs[0], 2.0 ** -9 / 3.0, delta=1e-17)

    def test_zero_source(self):
        rhs = assemble_rhs(DgSpace.structured(2), source=lambda x, y: np.zeros_like(x))
        np.testing.assert_array_equal(rhs, np.zeros(96))

    def test_entry_against_reference_quadrature(self):
        space = DgSpace.structured(2)
        element = 13
        rhs = assemble_rhs(space, degree=10)
        (x0, y0), (x1, y1), (x2, y2) = space.mesh.corners[element]
        grad = space.gradients[element, 0]
        center = space.mesh.barycenters[element]

        def integrand(t, s):
            x = x0 + s * (x1 - x0) + t * (x2 - x0)
            y = y0 + s * (y1 - y0) + t * (y2 - y0)
            phi = 1.0 / 3.0 + grad @ (np.array([x, y]) - center)
            return default_source(x, y) * phi

        reference, _ = integrate.dblquad(integrand, 0.0, 1.0, 0.0, lambda s: 1.0 - s, epsabs=1e-13, epsrel=1e-13)
        reference *= 2.0 * space.areas[element]
        self.assertAlmostEqual(rhs[3 * element], reference, delta=1e-9)


def _discrete_solution(level):
    space = DgSpace.structured(level)
    A = assemble_iipg(space, eta=5.0)
    return space, lu_solve(lu_factor(A), assemble_rhs(space))


class ErrorNormTests(SimpleTestCase):
    def test_patch_test(self):
        space = DgSpace.structured(3)

        def linear(x, y):
            return 1.0 + 2.0 * x - 3.0 * y

        def linear_grad(x, y):
            return np.stack([np.full_like(x, 2.0), np.full_like(x, -3.0)], axis=-1)

        errors = error_norms(space, interpolate(space, linear), exact=linear, exact_grad=linear_grad)
        self.assertLess(errors.l2_error, 1e-12)
        self.assertLess(errors.energy_error, 1e-12)

    def test_interpolation_orders(self):
        previous = None
        for level in (4, 5, 6):
            space = DgSpace.structured(level)
            errors = error_norms(space, interpolate(space, exact_solution))
            if previous is not None:
                self.assertTrue(3.5 <= previous.l2_error / errors.l2_error <= 4.5)
                self.assertTrue(1.7 <= previous.energy_error / errors.energy_error <= 2.3)
            previous = errors

    def test_discrete_solution_converges(self):
        energies = [error_norms(*_discrete_solution(level)).energy_error for level in (4, 5, 6)]
        for coarse, fine in zip(energies, energies[1:]):
            self.assertTrue(1.7 <= coarse / fine <= 2.3, f"ratio {coarse / fine}")

    def test_length_mismatch(self):
        space = DgSpace.structured(2)
        with self.assertRaises(DimensionMismatch):
            error_norms(space, np.zeros(space.total_dofs + 1))


class ExportSystemTests(SimpleTestCase):
    def test_writes_three_readable_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            paths = export_system(2, tmp)
            A = read_matrix_market(paths["A_h"])
            A0 = read_matrix_market(paths["A0"])
            rhs = read_matrix_market(paths["rhs"])
        space = DgSpace.structured(2)
        self.assertEqual((A != assemble_iipg(space, 5.0)).nnz, 0)
        self.assertEqual((A0 != assemble_sym(space, 5.0)).nnz, 0)
        self.assertEqual(rhs.shape, (96, 1))
        np.testing.assert_array_equal(rhs.toarray().ravel(), assemble_rhs(space))
