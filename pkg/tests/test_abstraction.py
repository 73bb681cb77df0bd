"""Grid construction and abstraction rows/certificates."""

import numpy as np
import pytest

import robustsynth as rs
from robustsynth.models import vdp_cell_deviation


class TestBuildGrid:
    def test_paper_resolution_geometry(self):
        grid = rs.build_grid([[-10, 10], [-10, 10]], [149, 149])
        assert grid.h[0] == pytest.approx(20 / 149, abs=1e-12)
        assert grid.h[0] == pytest.approx(0.13423, abs=1e-5)
        assert grid.beta == pytest.approx(0.09492, abs=1e-5)

    def test_desk_resolution(self):
        grid = rs.build_grid([[-10, 10], [-10, 10]], [41, 41])
        assert grid.h[0] == pytest.approx(0.4878, abs=1e-4)

    def test_single_cell_center(self):
        grid = rs.build_grid([[-2, 4]], [1])
        assert grid.centers[0, 0] == pytest.approx(1.0)

    def test_exact_tiling_and_bijection(self):
        grid = rs.build_grid([[-1, 1], [0, 3]], [4, 6])
        assert grid.num_cells == 24
        idx = grid.point_to_index(grid.centers)
        assert np.array_equal(idx, np.arange(24))
        assert grid.point_to_index([[2.0, 1.0]])[0] == -1
        # closed upper boundary maps into the last cell
        assert grid.point_to_index([[1.0, 3.0]])[0] == 23

    def test_invalid_counts(self):
        with pytest.raises(ValueError):
            rs.build_grid([[-1, 1]], [0])
        with pytest.raises(ValueError):
            rs.build_grid([[-1, 1]], [-3])


class TestInputSampling:
    def test_three_point_interval(self):
        assert np.allclose(rs.input_sampling([[-1, 1]], [3]).ravel(), [-1, 0, 1])

    def test_single_sample_is_midpoint(self):
        assert np.allclose(rs.input_sampling([[-1, 1]], [1]).ravel(), [0.0])

    def test_two_dim_cartesian(self):
        u = rs.input_sampling([[-1, 1], [-1, 1]], [2, 2])
        assert u.shape == (4, 2)
        assert {tuple(v) for v in u} == {(-1, -1), (-1, 1), (1, -1), (1, 1)}

    def test_bad_count(self):
        with pytest.raises(ValueError):
            rs.input_sampling([[-1, 1]], [0])


@pytest.fixture(scope="module")
def abstraction(linear_case):
    model, _, _, _, _ = linear_case
    grid = rs.build_grid([[-10, 10], [-10, 10]], [15, 15])
    inputs = rs.input_sampling([[-1, 1], [-1, 1]], [3, 1])
    return model, grid, inputs, rs.abstract_linear(model, grid, inputs)


class TestLinearAbstraction:
    def test_rows_sum_to_one(self, abstraction):
        _, _, _, (mdp, _) = abstraction
        assert np.max(np.abs(mdp.row_sums() - 1.0)) <= 1e-12

    def test_entries_nonnegative_and_sink_absorbing(self, abstraction):
        _, _, _, (mdp, _) = abstraction
        assert np.all(mdp.data >= 0.0)
        for u in range(mdp.nu):
            cols, vals = mdp.row(mdp.sink, u)
            assert list(cols) == [mdp.sink] and vals[0] == 1.0

    def test_certificate_formula(self, abstraction):
        model, grid, _, (_, cert) = abstraction
        assert cert.delta == 0.0
        assert cert.epsilon == pytest.approx(grid.beta / (1 - 0.9), rel=1e-12)
        assert cert.valid

    def test_paper_certificate_at_fine_resolution(self, linear_case):
        model, _, _, _, _ = linear_case
        grid = rs.build_grid([[-10, 10], [-10, 10]], [149, 149])
        cert = rs.linear_abstraction_certificate(model, grid)
        assert cert.epsilon == pytest.approx(0.950, abs=1e-3)
        assert cert.delta == 0.0

    def test_expansive_dynamics_marks_certificate_invalid(self):
        model = rs.LinearModel(A=1.1 * np.eye(2), B=np.eye(2), C=np.eye(2), R=np.eye(2))
        grid = rs.build_grid([[-5, 5], [-5, 5]], [5, 5])
        mdp, cert = rs.abstract_linear(model, grid, rs.input_sampling([[-1, 1], [-1, 1]], [1, 1]))
        assert not cert.valid
        assert mdp.ns == 25  # abstraction itself still built

    def test_rows_match_monte_carlo(self, abstraction):
        model, grid, inputs, (mdp, _) = abstraction
        rng = np.random.default_rng(1234)
        n_samples = 10**6
        for _ in range(20):
            s = int(rng.integers(mdp.ns))
            u = int(rng.integers(mdp.nu))
            mean = model.A @ grid.index_to_center(s) + model.B @ inputs[u]
            x = mean + rng.standard_normal((n_samples, 2)) @ model.R.T
            landed = grid.point_to_index(x)
            cols, vals = mdp.row(s, u)
            row = np.zeros(mdp.n_total)
            row[cols] = vals
            counts = np.bincount(np.where(landed < 0, mdp.sink, landed), minlength=mdp.n_total)
            freq = counts / n_samples
            sigma = np.sqrt(np.maximum(row * (1 - row), 1e-12) / n_samples)
            assert np.all(np.abs(freq - row) <= 4 * sigma + 1e-9)

    def test_requires_diagonal_noise(self):
        model = rs.LinearModel(A=0.9 * np.eye(2), B=0.7 * np.eye(2), C=np.eye(2),
                               R=np.array([[1.0, 0.3], [0.0, 1.0]]))
        grid = rs.build_grid([[-10, 10], [-10, 10]], [5, 5])
        with pytest.raises(ValueError):
            rs.abstract_linear(model, grid, [[0.0, 0.0]])

    def test_single_cell_huge_box(self):
        model = rs.LinearModel(A=np.zeros((1, 1)), B=np.zeros((1, 1)), C=np.eye(1), R=np.eye(1))
        grid = rs.build_grid([[-50, 50]], [1])
        mdp, _ = rs.abstract_linear(model, grid, [[0.0]])
        cols, vals = mdp.row(0, 0)
        row = dict(zip(cols.tolist(), vals.tolist()))
        assert row[0] >= 1.0 - 1e-9  # mean at the center, nearly all mass in the cell

    def test_coupled_pair_stays_in_relation(self, linear_case):
        # identically-noised nominal trajectory vs its rounded grid image:
        # the gap never exceeds beta / (1 - |A|)
        model, _, _, _, _ = linear_case
        grid = rs.build_grid([[-10, 10], [-10, 10]], [41, 41])
        bound = grid.beta / (1 - 0.9)
        rng = np.random.default_rng(77)
        n_traj = 1000
        x_nom = np.zeros((n_traj, 2))
        center = np.zeros((n_traj, 2))
        worst_gap = 0.0
        for _ in range(100):
            w = rng.standard_normal((n_traj, 2))
            x_nom = x_nom @ model.A.T + w
            center_next = center @ model.A.T + w
            idx = grid.point_to_index(center_next)
            inside = idx >= 0
            center = np.where(inside[:, None], grid.index_to_center(np.where(idx < 0, 0, idx)), center_next)
            x_nom = np.where(inside[:, None], x_nom, center)  # restart runs that left the box
            worst_gap = max(worst_gap, float(np.max(np.linalg.norm(x_nom - center, axis=1))))
        assert worst_gap <= bound + 1e-9


class TestNonlinearAbstraction:
    def test_linear_dynamics_give_uniform_deviation(self):
        # Lipschitz constant of a linear map is |A|: the table must be constant
        a_mat = 0.8 * np.eye(2)
        norm_a = 0.8

        def dynamics(x, u, theta):
            return np.asarray(x, dtype=float) @ a_mat.T

        model = rs.NonlinearModel(
            name="linear-as-nonlinear", n=2, m=1, dynamics=dynamics, output_map=None,
            theta0=np.array([0.0]), R=np.eye(2),
            disturbance_bound=lambda x, u, box: np.zeros(np.shape(np.atleast_2d(x))[0]),
            cell_deviation_bound=lambda c, half, u: np.full(
                np.atleast_2d(c).shape[0], norm_a * float(np.linalg.norm(half))
            ),
        )
        grid = rs.build_grid([[-2, 2], [-2, 2]], [5, 5])
        mdp, cert = rs.abstract_nonlinear(model, grid, [[0.0]])
        table = np.asarray(cert.delta)
        expected = 1.0 - rs.coupling_mass([norm_a * grid.beta])
        assert np.allclose(table, expected, atol=1e-15)
        assert cert.epsilon == pytest.approx(grid.beta)

    def test_vdp_rows_and_certificate(self, vdp_case):
        model, _, _, _, _ = vdp_case
        grid = rs.build_grid([[-3, 3], [-3, 3]], [15, 15])
        mdp, cert = rs.abstract_nonlinear(model, grid, rs.input_sampling([[-1, 1]], [3]))
        assert np.max(np.abs(mdp.row_sums() - 1.0)) <= 1e-12
        assert cert.delta_is_table and np.all(np.asarray(cert.delta) >= 0.0)
        assert cert.epsilon == pytest.approx(grid.beta)

    def test_refining_grid_shrinks_certificates(self, vdp_case):
        model, _, _, _, _ = vdp_case
        coarse = rs.build_grid([[-3, 3], [-3, 3]], [10, 10])
        fine = rs.build_grid([[-3, 3], [-3, 3]], [20, 20])
        inputs = [[0.0]]
        _, cert_coarse = rs.abstract_nonlinear(model, coarse, inputs)
        _, cert_fine = rs.abstract_nonlinear(model, fine, inputs)
        assert cert_fine.epsilon <= cert_coarse.epsilon
        # each fine cell sits inside one coarse cell: deviation bound can only shrink
        parents = coarse.point_to_index(fine.centers)
        fine_table = np.asarray(cert_fine.delta)
        coarse_table = np.asarray(cert_coarse.delta)
        assert np.all(fine_table[:, 0] <= coarse_table[parents, 0] + 1e-15)

    def test_tiny_cells_drive_delta_to_zero(self, vdp_case):
        model, _, _, _, _ = vdp_case
        deltas = []
        for scale in (1e-2, 1e-3, 1e-4):
            grid = rs.build_grid([[-scale, scale], [-scale, scale]], [2, 2])
            _, cert = rs.abstract_nonlinear(model, grid, [[0.0]])
            deltas.append(cert.delta_global())
        assert deltas[2] < deltas[1] < deltas[0]
        assert deltas[2] <= 1e-4

    def test_requires_cell_bound(self):
        model = rs.NonlinearModel(
            name="bare", n=1, m=1, dynamics=lambda x, u, t: np.asarray(x, dtype=float),
            output_map=None, theta0=np.array([0.0]), R=np.eye(1),
            disturbance_bound=lambda x, u, box: 0.0,
        )
        grid = rs.build_grid([[-1, 1]], [2])
        with pytest.raises(ValueError):
            rs.abstract_nonlinear(model, grid, [[0.0]])

    def test_cell_bound_consistency_with_rows(self, vdp_case):
        # the mean used for the row is the cell-center image; points inside
        # the cell stay within the certified deviation of that mean
        model, _, _, _, _ = vdp_case
        grid = rs.build_grid([[-3, 3], [-3, 3]], [12, 12])
        rng = np.random.default_rng(15)
        half = 0.5 * grid.h
        for s in rng.integers(0, grid.num_cells, 10):
            c = grid.index_to_center(int(s))
            bound = vdp_cell_deviation(c, half, 0.1, 1.0)
            pts = c + rng.uniform(-1, 1, (2000, 2)) * half
            dev = model.dynamics(pts, 0.0, 1.0) - model.dynamics(c, 0.0, 1.0)
            assert np.max(np.linalg.norm(dev, axis=1)) <= bound + 1e-12


class TestGridUtilities:
    def test_lattice_indices_spread(self):
        grid = rs.build_grid([[-10, 10], [-10, 10]], [41, 41])
        idx = grid.lattice_indices([5, 5])
        assert idx.shape == (25,)
        assert len(set(idx.tolist())) == 25
        centers = grid.index_to_center(idx)
        assert centers[:, 0].min() < -9 and centers[:, 0].max() > 9

    def test_lattice_counts_validated(self):
        grid = rs.build_grid([[-1, 1]], [4])
        with pytest.raises(ValueError):
            grid.lattice_indices([5])

    def test_input_count_broadcast(self):
        u = rs.input_sampling([[-1, 1], [0, 2]], [3])
        assert u.shape == (9, 2)


class TestRowsCrossCheck:
    def test_rows_match_rect_probability(self, abstraction):
        # dual route: batched row construction vs the per-cell kernel mass
        model, grid, inputs, (mdp, _) = abstraction
        rng = np.random.default_rng(3)
        edges = grid.axis_edges
        for _ in range(5):
            s = int(rng.integers(mdp.ns))
            u = int(rng.integers(mdp.nu))
            mean = model.A @ grid.index_to_center(s) + model.B @ inputs[u]
            kernel = rs.GaussianKernel(mean=mean, R=model.R)
            cols, vals = mdp.row(s, u)
            row = dict(zip(cols.tolist(), vals.tolist()))
            for cell in rng.integers(0, mdp.ns, 40):
                multi = np.unravel_index(int(cell), grid.cells)
                rect = [[edges[d][multi[d]], edges[d][multi[d] + 1]] for d in range(grid.n)]
                expected = rs.rect_probability(kernel, rect)
                got = row.get(int(cell), 0.0)
                assert abs(got - expected) <= max(1e-12, 1e-9 * expected)
