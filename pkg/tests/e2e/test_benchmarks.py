"""
End-to-end benchmark runs: Kovasznay flow, the lid-driven cavity and
reproducible CLI output.
"""

import pytest

from vip_flow.cli import EXIT_OK, main
from vip_flow.harness import run_cavity, run_kovasznay_study
from vip_flow.io import load_config, read_csv, read_manifest


class TestKovasznay:
    """Re = 40 Kovasznay flow with analytic wall data."""

    @pytest.mark.e2e
    @pytest.mark.slow
    def test_refinement_study(self, bundled_config):
        """Errors fall monotonically; 2% relative velocity error at h = 1/32."""
        records = run_kovasznay_study(load_config(bundled_config("kovasznay.cfg")))
        errors = [r.e_U_rel for r in records]
        assert [r.h for r in records] == [1 / 8, 1 / 16, 1 / 32]
        assert errors == sorted(errors, reverse=True)
        assert errors[-1] <= 0.02

    @pytest.mark.e2e
    @pytest.mark.slow
    def test_picard_updates_decrease(self, bundled_config):
        """After the first three steps every Picard update is smaller than the last."""
        config = load_config(bundled_config("kovasznay.cfg"))
        config.discretization.h = [1 / 16]
        (record,) = run_kovasznay_study(config)
        updates = record.trace.updates[3:]
        assert record.trace.converged
        assert all(b < a for a, b in zip(updates, updates[1:]))


class TestCavity:
    """Lid-driven cavity against the bundled reference centerlines."""

    @pytest.mark.e2e
    @pytest.mark.slow
    def test_re100_matches_reference(self, bundled_config):
        """Centerline u within 0.05 of the reference at h = 1/64."""
        result = run_cavity(load_config(bundled_config("cavity.cfg")))
        assert result.trace.converged
        assert result.max_deviation_u <= 0.05
        assert len(result.centerline_u) == 129
        assert result.samples.x.size == 65 * 65

    @pytest.mark.e2e
    @pytest.mark.slow
    def test_re400_primary_vortex(self, bundled_config):
        """Re = 400 at h = 1/16: converges with the u minimum in the lower half."""
        config = load_config(bundled_config("cavity.cfg"))
        config.problem.Re = 400
        config.discretization.h = [1 / 16]
        config.picard.tol = 1e-6
        config.picard.max_iter = 150
        config.picard.relaxation = 0.7
        result = run_cavity(config)
        y_min, u_min = min(result.centerline_u, key=lambda row: row[1])
        assert result.trace.converged
        assert u_min < -0.1
        assert y_min < 0.5
        assert result.max_deviation_u <= 0.2


class TestCli:
    """Command-line runs that write files."""

    @pytest.mark.e2e
    def test_runs_are_byte_identical(self, bundled_config, tmp_path):
        """The same config run twice writes the same bytes."""
        config = str(bundled_config("polynomial.cfg"))
        first, second = tmp_path / "a", tmp_path / "b"
        assert main(["converge", "-c", config, "-o", str(first)]) == EXIT_OK
        assert main(["converge", "-c", config, "-o", str(second)]) == EXIT_OK
        for name in ("errors.csv", "manifest.txt"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    @pytest.mark.e2e
    def test_small_cavity_run(self, write_config, tmp_path):
        """Re = 10 has no reference data: centerlines, fields and manifest only."""
        path = write_config(
            "[problem]\nkind = cavity\nRe = 10\n\n"
            "[discretization]\nh = 1/16\n\n"
            "[output]\ncenterline_samples = 17\nfield_samples = 9\n"
        )
        out = tmp_path / "cavity"
        assert main(["cavity", "-c", str(path), "-o", str(out)]) == EXIT_OK
        names = sorted(p.name for p in out.iterdir())
        assert names == ["centerline_u.csv", "centerline_v.csv", "fields.csv", "manifest.txt"]
        header, rows = read_csv(out / "centerline_u.csv")
        assert header == ["y", "u"]
        assert len(rows) == 17
        manifest = read_manifest(out / "manifest.txt")
        assert manifest["command"] == "cavity"
        assert manifest["Re"] == "10.0"
        assert "max_deviation_u" not in manifest
        _, fields = read_csv(out / "fields.csv")
        assert len(fields) == 81
