import numpy as np
import pytest

from errors import ConfigError
from graph_core import build_star_grid, graph_norm, sample_on_grid
from linearized import assemble_H, assemble_J
from resolvent import (GreenKernel, SpectralPoint, born_series_apply, branch_sqrt, free_resolvent_apply,
                       green_kernel, hypothesis_C_check, jost_solve, kirchhoff_resolvent_direct,
                       kirchhoff_resolvent_scattering, resolvent_residual, spectral_decomposition,
                       spectral_filter, spectral_jump, validate_green_kernel)

GRID = build_star_grid(3, 20.0, 201)


def bump_spinor(grid, width=1.0):
    """Different Gaussian pairs on every edge"""
    pairs = []
    for j in range(grid.n_edges):
        center = 4.0 + j
        pairs.append((lambda x, c=center: np.exp(-((x - c) / width) ** 2),
                      lambda x, c=center: 0.5j * np.exp(-((x - c - 0.5) / width) ** 2)))
    return sample_on_grid(pairs, grid)


def relative(a, b):
    return graph_norm(a - b) / graph_norm(b)


class TestBranches:
    """Square roots and spectral points"""

    def test_principal_branch(self):
        """Re sqrt >= 0 off the cut"""
        assert branch_sqrt(4.0) == 2.0
        assert branch_sqrt(-3.0 + 4.0j) == pytest.approx(1.0 + 2.0j)

    def test_cut_needs_side(self):
        """The negative axis picks +i or -i by the side tag"""
        assert branch_sqrt(-4.0, 1) == pytest.approx(2.0j)
        assert branch_sqrt(-4.0, -1) == pytest.approx(-2.0j)
        with pytest.raises(ValueError):
            branch_sqrt(-4.0)

    def test_spectral_point_from_momentum(self):
        """lambda = k^2 + w and mu = sqrt(lambda + w)"""
        pt = SpectralPoint.from_k(0.5, 1.0)
        assert pt.lam == pytest.approx(1.25)
        assert pt.k == pytest.approx(0.5)
        assert pt.mu == pytest.approx(1.5)
        assert pt.sign == 1

    def test_unknown_side(self):
        """Only +i0, -i0 and off-axis exist"""
        with pytest.raises(ValueError):
            SpectralPoint(1.0, 1.0, side="above")

    def test_shift_leaves_the_axis(self):
        """shifted moves +i0 points up and tags them off-axis"""
        moved = SpectralPoint.from_k(0.5, 1.0, side="+i0").shifted(1e-3)
        assert moved.lam.imag == pytest.approx(1e-3) and moved.side == "off-axis"


class TestDirectResolvent:
    """Sparse solves of (lambda - H) u = f"""

    def test_residual_in_gap(self, cubic):
        """The interior equations hold to rounding"""
        H = assemble_H(2.0, cubic, GRID)
        f = bump_spinor(GRID)
        pt = SpectralPoint(0.5, H.w)
        u = kirchhoff_resolvent_direct(pt, f, H)
        residual = resolvent_residual(pt, u, f, H)
        assert residual < 1e-10, f"Residual {residual}"

    def test_first_resolvent_identity(self, cubic):
        """R(l) - R(m) = (m - l) R(l) R(m) with Dirichlet far rows"""
        H = assemble_H(2.0, cubic, GRID)
        f = bump_spinor(GRID)
        lam, mu = SpectralPoint(0.3 + 0.2j, H.w), SpectralPoint(-0.4 + 0.5j, H.w)
        left = (kirchhoff_resolvent_direct(lam, f, H, far="dirichlet")
                - kirchhoff_resolvent_direct(mu, f, H, far="dirichlet"))
        inner = kirchhoff_resolvent_direct(mu, f, H, far="dirichlet")
        right = kirchhoff_resolvent_direct(lam, inner, H, far="dirichlet") * (mu.lam - lam.lam)
        assert relative(left, right) < 1e-9, f"Identity defect {relative(left, right)}"

    def test_transparent_rows_need_equal_alpha(self, cubic):
        """Distinct alpha_j cannot use the outgoing far rows"""
        H = assemble_H(2.0, cubic, GRID, alphas=[2.0, 2.0, 1.5])
        with pytest.raises(ConfigError):
            kirchhoff_resolvent_direct(SpectralPoint.from_k(0.5, H.w), bump_spinor(GRID), H)

    def test_scalar_rejected(self, cubic):
        """Only spinors are resolved"""
        H = assemble_H(2.0, cubic, GRID)
        with pytest.raises(ValueError):
            kirchhoff_resolvent_direct(SpectralPoint(0.5, H.w), sample_on_grid(1.0, GRID), H)


class TestFreeResolvent:
    """Closed form and Born series"""

    def test_closed_form_matches_direct(self):
        """Half-line convolution plus vertex amplitudes agree with the sparse solve"""
        J = assemble_J(2.0, GRID)
        f = bump_spinor(GRID)
        pt = SpectralPoint(0.5, J.w)
        closed = free_resolvent_apply(pt, f, 2.0)
        direct = kirchhoff_resolvent_direct(pt, f, J, far="dirichlet")
        assert relative(closed, direct) < 1e-2, f"Closed form defect {relative(closed, direct)}"

    def test_closed_form_distinct_alphas(self):
        """Per-edge kappa_j are accepted off the spectrum"""
        f = bump_spinor(GRID)
        u = free_resolvent_apply(SpectralPoint(0.1 + 0.5j, 0.25), f, [1.0, 2.0, 3.0])
        assert np.all(np.isfinite(u.data))

    def test_born_series_far_from_spectrum(self, cubic):
        """For large Im lambda the series converges to the direct solve"""
        H = assemble_H(2.0, cubic, GRID)
        f = bump_spinor(GRID)
        pt = SpectralPoint(0.5 + 20.0j, H.w)
        born = born_series_apply(pt, f, H, n_max=25)
        direct = kirchhoff_resolvent_direct(pt, f, H)
        assert not born.diverged and born.term_ratio < 1.0
        assert relative(born.approx, direct) < 1e-6, f"Born defect {relative(born.approx, direct)}"

    def test_unknown_free_path(self, cubic):
        """free must be discrete or closed_form"""
        H = assemble_H(2.0, cubic, GRID)
        with pytest.raises(ValueError):
            born_series_apply(SpectralPoint(0.5j, H.w), bump_spinor(GRID), H, free="fourier")


class TestJost:
    """Jost solutions, scattering data and the Green kernel"""

    @pytest.mark.parametrize("k", [0.5, 1.0, 1.5])
    def test_unitarity(self, cubic, k):
        """|s|^2 + |r|^2 = 1 and r conj(s) + s conj(r) = 0"""
        jost = jost_solve(k, 2.0, cubic, GRID)
        unitarity = abs(abs(jost.s) ** 2 + abs(jost.r) ** 2 - 1.0)
        symmetry = abs(jost.r * np.conj(jost.s) + jost.s * np.conj(jost.r))
        assert unitarity < 1e-6, f"k={k}: unitarity defect {unitarity}"
        assert symmetry < 1e-6, f"k={k}: symmetry defect {symmetry}"

    def test_zeta2_normalisation(self, cubic):
        """The second component of zeta2 vanishes at the vertex"""
        jost = jost_solve(0.7, 2.0, cubic, GRID)
        assert abs(jost.zeta2(0.0)[1, 0]) < 1e-10

    def test_scattering_data_independent_of_start(self, cubic):
        """Starting the backward integration deeper in the tail leaves s and r unchanged"""
        near = jost_solve(0.7, 2.0, cubic, GRID)
        far = jost_solve(0.7, 2.0, cubic, build_star_grid(3, 30.0, 301))
        assert abs(near.s - far.s) < 1e-6, f"s: {near.s} vs {far.s}"
        assert abs(near.r - far.r) < 1e-6, f"r: {near.r} vs {far.r}"

    def test_momentum_range(self, cubic):
        """k = 0 and |k| above the low-energy range are refused"""
        with pytest.raises(ValueError):
            jost_solve(0.0, 2.0, cubic, GRID)
        with pytest.raises(ConfigError):
            jost_solve(3.0, 2.0, cubic, GRID)

    def test_complex_momentum_has_no_scattering_data(self, cubic):
        """Off the axis only zeta1 and zeta2 are available"""
        jost = jost_solve(0.5 + 0.1j, 2.0, cubic, GRID)
        with pytest.raises(ValueError):
            jost.frakF(0.0)

    def test_green_kernel_solves_the_equation(self, cubic):
        """(H - E) int G b = b for a Gaussian source"""
        kernel = GreenKernel(jost_solve(0.5, 2.0, cubic, GRID), x_max=6.0)
        defect = validate_green_kernel(kernel, center=3.0, width=0.5)
        assert defect < 1e-2, f"Green kernel defect {defect}"

    def test_lower_side_is_conjugate(self, cubic):
        """G(E - i0) = conj G(E + i0)"""
        jost = jost_solve(0.5, 2.0, cubic, GRID)
        x = np.array([0.5, 2.0])
        upper = green_kernel(x, x, jost.E, jost, side="+i0")
        lower = green_kernel(x, x, jost.E, jost, side="-i0")
        assert np.allclose(lower, np.conj(upper))

    def test_energy_mismatch(self, cubic):
        """The kernel energy must match the Jost data"""
        jost = jost_solve(0.5, 2.0, cubic, GRID)
        with pytest.raises(ValueError):
            green_kernel(np.array([1.0]), np.array([1.0]), jost.E + 0.1, jost)

    def test_scattering_form_arguments(self, cubic):
        """Side tags and momenta are checked before solving"""
        jost = jost_solve(0.5, 2.0, cubic, GRID)
        f = bump_spinor(GRID)
        with pytest.raises(ValueError):
            kirchhoff_resolvent_scattering(0.5, f, "off-axis", jost)
        with pytest.raises(ValueError):
            kirchhoff_resolvent_scattering(0.6, f, "+i0", jost)

    def test_spectral_jump_small_momentum(self, cubic):
        """|k| < 1e-3 is refused"""
        with pytest.raises(ValueError):
            spectral_jump(1.0, 1.0, 1e-4, 2.0, cubic, GRID)

    def test_threshold_determinants(self, cubic):
        """The cubic soliton passes the basis determinant check"""
        report = hypothesis_C_check(2.0, cubic, GRID, k_grid=[0.5, 1.0])
        assert report.passed, f"Basis determinants {report.basis_value_det}, {report.basis_derivative_det}"
        assert report.min_vertex_det > 0.0


class TestSpectralFilter:
    """Dense spectral windows on a small grid"""

    def test_windows_partition_the_projection(self, cubic, coarse_grid):
        """high + low + root reproduces f projected on the constraint-satisfying subspace"""
        H = assemble_H(2.0, cubic, coarse_grid)
        decomposition = spectral_decomposition(H)
        f = bump_spinor(coarse_grid)
        parts = [spectral_filter(H, window, f, 2.0, decomposition=decomposition)
                 for window in ("high", "low", "root")]
        total = parts[0] + parts[1] + parts[2]
        basis = decomposition.basis
        projected = basis @ (basis.conj().T @ f.flat())
        error = np.abs(total.flat() - projected).max() / np.abs(projected).max()
        assert error < 1e-6, f"Partition defect {error}"

    def test_unknown_window(self, cubic, coarse_grid):
        """Only high, low and root windows exist"""
        H = assemble_H(2.0, cubic, coarse_grid)
        with pytest.raises(ValueError):
            spectral_filter(H, "band", bump_spinor(coarse_grid), 2.0)

    def test_size_limit(self, cubic):
        """Dense decompositions are limited in size"""
        H = assemble_H(2.0, cubic, build_star_grid(3, 20.0, 1001))
        with pytest.raises(ConfigError):
            spectral_decomposition(H)
