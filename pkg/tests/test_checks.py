import pytest

from crflow.checks import (
    CFL_ANCHOR_M1_N16,
    FULL_CHECKS,
    MUTATION_FACTOR,
    QUICK_CHECKS,
    check_bochner_refinement,
    check_cfl_anchor,
    check_gradient,
    check_mutation_caught,
    command_check,
)
from crflow.operators import HORIZONTAL_DENSITY_FACTOR

QUICK_NAMES = [name for name, _ in QUICK_CHECKS]
FULL_ONLY = [(name, fn) for name, fn in FULL_CHECKS if name not in QUICK_NAMES]


@pytest.mark.parametrize("name, check", QUICK_CHECKS, ids=QUICK_NAMES)
def test_quick_check_passes(name, check):
    ok, detail = check()
    assert ok, f"{name}: {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("name, check", FULL_ONLY, ids=[name for name, _ in FULL_ONLY])
def test_full_check_passes(name, check):
    ok, detail = check()
    assert ok, f"{name}: {detail}"


def test_perturbed_density_fails_gradient_gate():
    ok, _ = check_gradient(density_factor=HORIZONTAL_DENSITY_FACTOR * MUTATION_FACTOR)
    assert not ok
    assert check_mutation_caught()[0]


@pytest.mark.slow
def test_bochner_excursion_shrinks_under_refinement():
    _, detail = check_bochner_refinement()
    coarse, fine = (max(0.0, -detail[f"min_residual_N{N}"]) for N in (16, 32))
    assert fine <= coarse
    assert detail["excursion_shrinks"]


def test_cfl_anchor_is_pinned():
    ok, detail = check_cfl_anchor()
    assert ok
    assert detail["dt_m1_N16_cfl05"] == pytest.approx(CFL_ANCHOR_M1_N16, rel=1e-15)


def test_quick_suite_report():
    report = command_check("quick")
    assert report["passed"] and not report["hard_fail"]
    assert report["hard_pass"] == QUICK_NAMES
    assert report["soft_warn"] == ["refinement_studies_skipped"]
    assert len(report["logs"]) == len(QUICK_CHECKS)


def test_unknown_level():
    with pytest.raises(ValueError, match="Unknown check level"):
        command_check("medium")
