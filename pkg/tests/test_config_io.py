"""Config parsing/validation and file-format round trips."""

import numpy as np
import pytest

from cradle.coeffs import markov_coefficients
from cradle.config import (ConfigError, ExperimentConfig, parse_config_text)
from cradle.fock import FockSpace, SystemSpec, cat_state
from cradle.io import (read_coeff_csv, read_fidelity_csv, read_kernel_csv,
                       read_state_binary, read_sweep_csv,
                       read_sweep_summary_csv, read_wigner_csv,
                       write_coeff_csv, write_fidelity_csv, write_kernel_csv,
                       write_state_binary, write_sweep_csv,
                       write_sweep_summary_csv, write_wigner_csv, SchemaError)
from cradle.kernels import LorentzSpec, ou_kernel
from cradle.observables import FidelityCurve, wigner_grid

BASE = """
[system]
cavities = 2
omega = 1.0
lambda = 0.0
alpha = 2.0

[environment]
kind = ou
gamma_big = 1.0
tau = 10.0
delta = 10.0

[numerics]
cutoff = 20
dt = 0.01
t_max = 3.0
"""


class TestConfigParsing:
    def test_basic_resolution(self):
        cfg = parse_config_text(BASE)
        assert cfg.system.omega == (1.0, 1.0)
        assert cfg.system.lam == (0.0, 0.0)
        assert cfg.system.weights == (1.0, 1.0)
        assert cfg.environment.gamma == pytest.approx(0.1)
        assert cfg.environment.tau is None
        spec = cfg.system_spec()
        assert isinstance(spec, SystemSpec)

    def test_unknown_key_suggestion(self):
        with pytest.raises(ConfigError, match="gamma_big"):
            parse_config_text(BASE.replace("gamma_big", "gama_big"))

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match=r"\[systm\]"):
            parse_config_text(BASE.replace("[system]", "[systm]"))

    def test_tau_gamma_exclusive(self):
        text = BASE.replace("tau = 10.0", "tau = 10.0\ngamma = 0.1")
        with pytest.raises(ConfigError, match="mutually exclusive"):
            parse_config_text(text)

    def test_eta_shorthand(self):
        text = BASE.replace("cavities = 2", "cavities = 3") + "\n"
        text = text.replace("[environment]", "eta = 0.5\n\n[environment]")
        cfg = parse_config_text(text)
        assert cfg.system.weights == (1.0, 0.5, 1.5)

    def test_eta_and_weights_conflict(self):
        text = BASE.replace(
            "[environment]", "eta = 0.5\nweights = 1 1\n\n[environment]")
        with pytest.raises(ConfigError):
            parse_config_text(text)

    def test_sweep_block(self):
        text = BASE + "\n[sweep]\nparameter = tau\nvalues = 0.5, 1, 2\n"
        cfg = parse_config_text(text)
        assert cfg.sweep.values == (0.5, 1.0, 2.0)

    def test_sweep_range_syntax(self):
        text = BASE + "\n[sweep]\nparameter = lambda1\nvalues = 0.25:1.0:0.25\n"
        cfg = parse_config_text(text)
        assert cfg.sweep.values == pytest.approx((0.25, 0.5, 0.75, 1.0))

    def test_unsweepable_parameter(self):
        text = BASE + "\n[sweep]\nparameter = cutoff\nvalues = 1, 2\n"
        with pytest.raises(ConfigError, match="cannot sweep"):
            parse_config_text(text)

    def test_open_boundary_enforced(self):
        text = BASE.replace("lambda = 0.0", "lambda = 0.3, 0.4")
        with pytest.raises(ConfigError, match="open boundary"):
            parse_config_text(text)

    def test_cutoff_default_follows_alpha(self):
        text = BASE.replace("cutoff = 20\n", "")
        cfg = parse_config_text(text)
        assert cfg.numerics.cutoff == 20

    def test_roundtrip_through_dict(self):
        text = BASE + "\n[sweep]\nparameter = delta\nvalues = 1, 2\n"
        cfg = parse_config_text(text)
        clone = ExperimentConfig.from_dict(cfg.to_dict())
        assert clone.to_dict() == cfg.to_dict()


class TestCsvRoundTrips:
    def test_fidelity(self, tmp_path):
        curve = FidelityCurve(times=np.array([0.0, 0.5]),
                              fidelity=np.array([[0.1, 0.9], [0.2, 0.8]]),
                              theta=np.array([[0.0, 1.0], [2.0, 3.0]]))
        path = tmp_path / "fid.csv"
        write_fidelity_csv(path, curve)
        back = read_fidelity_csv(path)
        np.testing.assert_allclose(back.times, curve.times)
        np.testing.assert_allclose(back.fidelity, curve.fidelity)
        np.testing.assert_allclose(back.theta, curve.theta)

    def test_coeff_table(self, tmp_path):
        table = markov_coefficients(SystemSpec.uniform(2), 1.0, 0.1, 1.0)
        path = tmp_path / "coeff.csv"
        write_coeff_csv(path, table)
        back = read_coeff_csv(path)
        assert back.provenance == "markov-analytic"
        assert back.dt == pytest.approx(table.dt)
        np.testing.assert_allclose(back.F, table.F)

    def test_wigner(self, tmp_path):
        space = FockSpace(1, 16)
        grid = wigner_grid(cat_state(space, 1, 1.0).dyad(), window=4.0,
                           resolution=21)
        path = tmp_path / "wigner.csv"
        write_wigner_csv(path, grid, probe_time=1.5)
        back = read_wigner_csv(path)
        np.testing.assert_allclose(back.xs, grid.xs)
        np.testing.assert_allclose(back.values, grid.values)
        assert back.boundary_warning == grid.boundary_warning

    def test_kernel(self, tmp_path):
        spec = LorentzSpec(1.0, 0.5, 2.0)
        u = np.linspace(0, 5, 101)
        path = tmp_path / "kernel.csv"
        write_kernel_csv(path, u, ou_kernel(spec)(u))
        kern = read_kernel_csv(path)
        np.testing.assert_allclose(kern(u), ou_kernel(spec)(u), atol=1e-12)

    def test_sweep_files(self, tmp_path):
        curve = FidelityCurve(times=np.array([0.0, 1.0]),
                              fidelity=np.array([[0.0, 0.1], [0.5, 0.6]]),
                              theta=np.zeros((2, 2)))
        blocks = [(0.5, curve), (1.0, curve)]
        path = tmp_path / "sweep.csv"
        write_sweep_csv(path, "tau", blocks)
        parameter, header, data = read_sweep_csv(path)
        assert parameter == "tau"
        assert data.shape == (4, 4)
        spath = tmp_path / "summary.csv"
        write_sweep_summary_csv(spath, "tau",
                                [(0.5, [0.5, 0.6], [1.0, 1.0])])
        header, rows = read_sweep_summary_csv(spath)
        assert rows[0, 1] == pytest.approx(0.5)

    def test_state_binary(self, tmp_path):
        space = FockSpace(2, 4)
        rng = np.random.default_rng(0)
        rho = rng.normal(size=(16, 16)) + 1j * rng.normal(size=(16, 16))
        path = tmp_path / "rho_t1.bin"
        write_state_binary(path, rho, space, probe_time=1.0)
        back, sidecar = read_state_binary(path)
        np.testing.assert_array_equal(back, rho)
        assert sidecar["num_modes"] == 2
        assert "mode 1 slowest" in sidecar["basis_ordering"]

    def test_schema_mismatch_rejected(self, tmp_path):
        table = markov_coefficients(SystemSpec.uniform(2), 1.0, 0.1, 1.0)
        path = tmp_path / "coeff.csv"
        write_coeff_csv(path, table)
        with pytest.raises(SchemaError):
            read_fidelity_csv(path)
