import numpy as np
import pytest

from helmfree.grid import full_extent, make_grid
from helmfree.operators import Dirichlet, Sommerfeld
from helmfree.problems import (KH_LIMIT, ConstantK, LayeredMedium, ProblemError,
                               build_problem, build_rhs, closed_off_analytical,
                               closed_off_problem, error_norms,
                               fill_dirichlet_boundary, gen_salt_surrogate,
                               read_velocity_grid, salt_problem,
                               wedge_problem, write_velocity_grid,
                               zero_dirichlet_boundary)

from .oracles import assemble_operator


class TestClosedOffAnalytical:
    def test_all_sines_one(self):
        assert closed_off_analytical(0.5, 0.25, 0.125) == pytest.approx(2.0)

    def test_boundary_point(self):
        assert closed_off_analytical(0.3, 0.7, 0.0) == pytest.approx(1.0)

    def test_center(self):
        assert closed_off_analytical(0.5, 0.5, 0.5) == pytest.approx(1.0)


@pytest.mark.filterwarnings("ignore:kh =")
class TestClosedOffRhs:
    def test_center_value_k40(self):
        # b(0.5,0.5,0.5) = (21pi^2 - 1600)*sin(pi/2)sin(pi)sin(2pi) - 1600
        pspec = closed_off_problem(17, 40.0)
        _, rhs = build_problem(pspec, full_extent(pspec.grid))
        assert rhs.owned[8, 8, 8] == pytest.approx(-1600.0)

    def test_boundary_planes_zeroed(self):
        # elimination convention: the RHS carries no boundary rows
        pspec = closed_off_problem(9, 10.0)
        _, rhs = build_problem(pspec, full_extent(pspec.grid))
        b = rhs.owned
        assert np.all(b[0] == 0) and np.all(b[-1] == 0)
        assert np.all(b[:, 0] == 0) and np.all(b[:, -1] == 0)
        assert np.all(b[:, :, 0] == 0) and np.all(b[:, :, -1] == 0)

    def test_lifting_next_to_boundary(self):
        # interior vertex adjacent to boundary picks up g/h^2 per neighbor
        pspec = closed_off_problem(9, 10.0)
        grid = pspec.grid
        _, rhs = build_problem(pspec, full_extent(grid))
        x = grid.axis_coords(0, 1, 9)
        k2 = 10.0**2
        base = ((21 * np.pi**2 - k2) * np.sin(np.pi * x[1])
                * np.sin(2 * np.pi * x[4]) * np.sin(4 * np.pi * x[4]) - k2)
        # vertex (2,5,5) 1-based: one eliminated neighbor (dim-1 low face)
        assert rhs.owned[1, 4, 4] == pytest.approx(base + 1.0 / grid.h**2)


class TestDiracRhs:
    def test_wedge_value_and_sum(self):
        pspec = wedge_problem(shape=(61, 61, 101))
        grid = pspec.grid
        assert grid.h == pytest.approx(10.0)
        rhs = build_rhs(pspec, full_extent(grid))
        nz = np.nonzero(rhs.owned)
        assert len(nz[0]) == 1
        assert rhs.owned[nz][0] == pytest.approx(1.0 / 1000.0)
        # source (300,300,0): vertex 31,31,101 (x3=0 is the high face)
        assert (nz[0][0], nz[1][0], nz[2][0]) == (30, 30, 100)
        assert np.sum(rhs.owned) * grid.h**3 == 1.0

    def test_dirac_sum_exact_on_salt_surrogate(self, tmp_path):
        path = tmp_path / "v.bin"
        gen_salt_surrogate(path, (9, 9, 5))
        medium = read_velocity_grid(path, (9, 9, 5), frequency=2.0)
        pspec = salt_problem(medium.velocities, shape=(9, 9, 5),
                             domain=((0, 12800), (0, 12800), (0, 6400)))
        rhs = build_rhs(pspec, full_extent(pspec.grid))
        assert np.sum(rhs.owned) * pspec.grid.h**3 == 1.0


class TestKhRule:
    def test_no_warning_at_limit(self, recwarn):
        pspec = closed_off_problem(65, 40.0)   # kh = 40/64 = 0.625 exactly
        build_problem(pspec, full_extent(pspec.grid))
        assert not [w for w in recwarn.list if "kh" in str(w.message)]

    def test_warning_beyond_limit(self):
        pspec = closed_off_problem(33, 40.0)   # kh = 40/32 = 1.25
        with pytest.warns(UserWarning, match="kh"):
            build_problem(pspec, full_extent(pspec.grid))

    def test_limit_constant(self):
        assert KH_LIMIT == 0.625


class TestMedia:
    def test_wavenumber_relation_exact(self):
        grid = make_grid(5, 5, 5, 150.0, origin=(0, 0, -600))
        medium = LayeredMedium(frequency=20.0)
        k = medium.k_field(grid, full_extent(grid))
        x1 = grid.axis_coords(0, 1, 5)[:, None, None]
        x3 = grid.axis_coords(2, 1, 5)[None, None, :]
        c = medium.velocity(x1, x3)
        assert np.array_equal(k, 2.0 * np.pi * 20.0 / np.broadcast_to(
            c, (5, 5, 5)))

    def test_layer_ordering(self):
        medium = LayeredMedium(frequency=20.0, x1_span=(0.0, 600.0))
        # at x1=0: interfaces at -200 and -500
        assert medium.velocity(np.float64(0.0), np.float64(-100.0)) == 2000.0
        assert medium.velocity(np.float64(0.0), np.float64(-300.0)) == 1500.0
        assert medium.velocity(np.float64(0.0), np.float64(-600.0)) == 3000.0

    def test_dipping_interface(self):
        medium = LayeredMedium(frequency=20.0, x1_span=(0.0, 600.0))
        # at x1=600 the first interface sits at -400
        assert medium.velocity(np.float64(600.0), np.float64(-300.0)) == 2000.0

    def test_constant_k_negative_rejected(self):
        grid = make_grid(3, 3, 3, 1.0)
        with pytest.raises(ProblemError):
            ConstantK(-1.0).k_field(grid, full_extent(grid))


class TestTruncationError:
    @pytest.mark.parametrize("n", [17, 33])
    def test_second_order_residual(self, n):
        """A(h) u_exact - b = O(h^2); the ratio across refinement is ~4."""
        ratios = self._residual(n), self._residual(2 * n - 1)
        assert 3.0 <= ratios[0] / ratios[1] <= 5.0

    @staticmethod
    def _residual(n):
        pspec = closed_off_problem(n, 10.0)
        grid = pspec.grid
        spec, rhs = build_problem(pspec, full_extent(grid))
        A = assemble_operator(spec, grid)
        x1 = grid.axis_coords(0, 1, n)[:, None, None]
        x2 = grid.axis_coords(1, 1, n)[None, :, None]
        x3 = grid.axis_coords(2, 1, n)[None, None, :]
        u = closed_off_analytical(x1, x2, x3).astype(np.complex128)
        zero_dirichlet_boundary(u, grid, full_extent(grid))
        r = A @ u.ravel() - rhs.owned.ravel()
        # boundary rows are eliminated; measure the PDE rows only
        r = r.reshape(grid.shape)[1:-1, 1:-1, 1:-1]
        return np.abs(r).max()


class TestErrorNorms:
    def test_exact_samples_give_zero(self):
        pspec = closed_off_problem(9, 5.0)
        grid = pspec.grid
        x1 = grid.axis_coords(0, 1, 9)[:, None, None]
        x2 = grid.axis_coords(1, 1, 9)[None, :, None]
        x3 = grid.axis_coords(2, 1, 9)[None, None, :]
        u = closed_off_analytical(x1, x2, x3)
        max_abs, l2, log_err = error_norms(u, pspec)
        assert max_abs == 0.0 and l2 == 0.0
        assert np.all(log_err == -16.0)

    def test_no_analytical_solution(self):
        pspec = wedge_problem()
        with pytest.raises(ProblemError):
            error_norms(np.zeros(pspec.grid.shape), pspec)

    def test_shape_mismatch(self):
        pspec = closed_off_problem(9, 5.0)
        with pytest.raises(ProblemError):
            error_norms(np.zeros((5, 5, 5)), pspec)


class TestBoundaryHelpers:
    def test_zero_then_fill_round_trip(self):
        grid = make_grid(5, 5, 5, 0.25)
        e = full_extent(grid)
        u = np.ones(grid.shape, dtype=np.complex128) * 3.0
        zero_dirichlet_boundary(u, grid, e)
        assert u[0, 2, 2] == 0.0 and u[2, 2, 2] == 3.0
        fill_dirichlet_boundary(u, grid, e, 1.0)
        assert u[0, 2, 2] == 1.0 and u[2, 2, 2] == 3.0


class TestVelocityFiles:
    def test_round_trip_bit_exact(self, tmp_path):
        path = tmp_path / "v.bin"
        surrogate = gen_salt_surrogate(path, (7, 6, 5))
        medium = read_velocity_grid(path, (7, 6, 5))
        assert np.array_equal(np.asarray(medium.velocities), surrogate)

    def test_constant_file(self, tmp_path):
        path = tmp_path / "c.bin"
        write_velocity_grid(path, np.full((3, 3, 3), 1500.0))
        medium = read_velocity_grid(path, (3, 3, 3), frequency=2.0)
        grid = make_grid(3, 3, 3, 20.0)
        k = medium.k_field(grid, full_extent(grid))
        assert np.all(k == 2 * np.pi * 2.0 / 1500.0)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(ProblemError, match="bytes"):
            read_velocity_grid(path, (3, 3, 3))

    def test_surrogate_band_and_determinism(self, tmp_path):
        a = gen_salt_surrogate(tmp_path / "a.bin", (9, 9, 7))
        b = gen_salt_surrogate(tmp_path / "b.bin", (9, 9, 7))
        assert np.array_equal(a, b)
        assert a.min() >= 1500.0 and a.max() <= 4482.0
        assert a.max() == 4482.0          # the salt body is present
        assert a.dtype == np.float32

    def test_out_of_band_velocities_warn(self):
        with pytest.warns(UserWarning, match="velocity range"):
            salt_problem(np.full((5, 5, 5), 900.0), shape=(5, 5, 5),
                         domain=((0, 400), (0, 400), (0, 400)))


class TestGridDomainConsistency:
    def test_non_uniform_spacing_rejected(self):
        with pytest.raises(ProblemError, match="non-uniform"):
            wedge_problem(shape=(193, 321, 193),
                          domain=((0, 600), (0, 600), (-1000, 0)))

    def test_problem_boundary_conditions(self):
        assert isinstance(closed_off_problem(9, 5.0).bc, Dirichlet)
        assert isinstance(wedge_problem().bc, Sommerfeld)
