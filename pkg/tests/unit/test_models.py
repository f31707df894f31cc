"""
Unit tests for the validated input models.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from vip_flow.models import Domain, KovasznayParams, PicardConfig, RunConfig, parse_length


class TestDomain:
    """Rectangles with per-axis periodicity."""

    @pytest.mark.unit
    def test_bounds_validated(self):
        """Reversed or infinite bounds are rejected."""
        with pytest.raises(ValidationError):
            Domain(bounds=((1.0, 0.0), (0.0, 1.0)))
        with pytest.raises(ValidationError):
            Domain(bounds=((0.0, math.inf), (0.0, 1.0)))

    @pytest.mark.unit
    def test_frozen(self, periodic_domain):
        """Domains are immutable."""
        with pytest.raises(ValidationError):
            periodic_domain.periodic = (False, False)

    @pytest.mark.unit
    def test_minimum_image(self, periodic_domain, bounded_domain):
        """Periodic axes take the short way round."""
        a, b = np.array([0.95, 0.5]), np.array([0.05, 0.5])
        np.testing.assert_allclose(periodic_domain.displacement(a, b), [-0.1, 0.0])
        np.testing.assert_allclose(bounded_domain.displacement(a, b), [0.9, 0.0])
        assert periodic_domain.distance(a, b) == pytest.approx(0.1)

    @pytest.mark.unit
    def test_wrap_and_contains(self, periodic_domain, bounded_domain):
        """Periodic coordinates wrap; bounded ones are checked as given."""
        np.testing.assert_allclose(periodic_domain.wrap([1.25, -0.25]), [0.25, 0.75])
        assert periodic_domain.contains(np.array([1.5, 0.5]))
        assert not bounded_domain.contains(np.array([1.5, 0.5]))

    @pytest.mark.unit
    def test_geometry(self):
        """Extents and area of the Kovasznay rectangle."""
        domain = Domain(bounds=((-0.5, 1.5), (0.0, 2.0)))
        np.testing.assert_array_equal(domain.extents, [2.0, 2.0])
        assert domain.area == 4.0
        assert not domain.fully_periodic


class TestParseLength:
    """Fractions and decimals for h."""

    @pytest.mark.unit
    @pytest.mark.parametrize("text, expected", [("1/16", 0.0625), ("0.125", 0.125), (" 1/4 ", 0.25), (2, 2.0)])
    def test_accepted(self, text, expected):
        """Fractions, decimals and numbers."""
        assert parse_length(text) == expected

    @pytest.mark.unit
    @pytest.mark.parametrize("text", ["abc", "1/0", ""])
    def test_rejected(self, text):
        """Text that is not a length."""
        with pytest.raises(ValueError):
            parse_length(text)


class TestRunConfig:
    """Resolved run settings."""

    @pytest.mark.unit
    @pytest.mark.parametrize(
        "kind, bounds, periodic",
        [
            ("stokes-manufactured", ((0.0, 1.0), (0.0, 1.0)), (True, True)),
            ("stokes-polynomial", ((0.0, 1.0), (0.0, 1.0)), (False, False)),
            ("kovasznay", ((-0.5, 1.5), (0.0, 2.0)), (False, False)),
            ("cavity", ((0.0, 1.0), (0.0, 1.0)), (False, False)),
        ],
    )
    def test_default_domains(self, kind, bounds, periodic):
        """Each problem kind brings its own rectangle."""
        config = RunConfig.model_validate({"problem": {"kind": kind}})
        assert config.domain.bounds == bounds
        assert config.domain.periodic == periodic

    @pytest.mark.unit
    def test_laplacian_mode_follows_domain(self):
        """Composite on periodic squares, direct on walled ones, unless set."""
        assert RunConfig().laplacian_mode == "composite"
        assert RunConfig.model_validate({"problem": {"kind": "cavity"}}).laplacian_mode == "direct"
        explicit = RunConfig.model_validate({"assembly": {"laplacian_mode": "direct"}})
        assert explicit.laplacian_mode == "direct"

    @pytest.mark.unit
    def test_string_bounds_and_flags(self):
        """Config-file strings for bounds and periodic flags."""
        config = RunConfig.model_validate(
            {"problem": {"kind": "cavity", "bounds": "0, 2, 0, 1", "periodic": "true, false"}}
        )
        assert config.domain.bounds == ((0.0, 2.0), (0.0, 1.0))
        assert config.domain.periodic == (True, False)

    @pytest.mark.unit
    def test_extra_keys_forbidden(self):
        """Typos in section keys are caught."""
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"picard": {"tolerance": 1e-6}})

    @pytest.mark.unit
    def test_perturbation_range(self):
        """Amplitudes from 0.45 on are refused."""
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"discretization": {"perturbation": 0.5}})

    @pytest.mark.unit
    def test_picard_config(self):
        """Re comes from the problem section, the rest from [picard]."""
        config = RunConfig.model_validate({"problem": {"Re": 400}, "picard": {"tol": 1e-6, "relaxation": 0.5}})
        picard = config.picard_config
        assert isinstance(picard, PicardConfig)
        assert (picard.Re, picard.tol, picard.relaxation) == (400.0, 1e-6, 0.5)

    @pytest.mark.unit
    def test_flatten_is_sorted(self):
        """Flattened keys are section.key, sorted, with resolved extras."""
        flat = RunConfig().flatten()
        assert list(flat) == sorted(flat)
        assert flat["discretization.h"] == "0.125,0.0625,0.03125"
        assert flat["resolved.periodic"] == "(True, True)"


class TestKovasznayParams:
    """Reynolds number validation."""

    @pytest.mark.unit
    def test_positive_reynolds(self):
        """Re must be positive."""
        with pytest.raises(ValidationError):
            KovasznayParams(Re=0.0)

    @pytest.mark.unit
    def test_decay_is_negative(self):
        """lambda < 0 for every positive Re."""
        assert all(KovasznayParams(Re=re).lam < 0 for re in (1.0, 40.0, 1000.0))
