"""Fast slice of the gradient suite plus checks that the checker itself can fail.

The full three-seed run over every case lives in the acceptance suite.
"""
import numpy as np
import pytest
from scipy.special import erf

from swinfir import gradcheck
from swinfir import tensor as T
from swinfir.gradcheck import CASES, TOL, check_case, run_suite

QUICK = ["frequency_block", "spatial_branch", "sfb", "hourglass_sfb", "window_attention", "stl", "sftl",
         "charbonnier_loss"]


@pytest.mark.parametrize("name", QUICK)
def test_case_passes_at_seed_0(name):
    r = check_case(name, 0)
    assert r.passed, f"{name}: rel err {r.error:.2e} at {r.worst}"
    assert r.coords > 0


def test_every_block_has_a_case():
    assert set(CASES) == {"frequency_block", "spatial_branch", "sfb", "hourglass_sfb", "window_attention", "stl",
                          "rstb", "sftl", "hstl", "toy_model", "charbonnier_loss"}


def _skewed_gelu(x):
    # forward is exact, backward is off by 1%
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd * xd) / np.sqrt(2.0 * np.pi)
    return T.record(xd * cdf, (x,), lambda g: (1.01 * g * (cdf + xd * pdf),), "gelu")


def test_a_wrong_backward_is_caught(monkeypatch):
    monkeypatch.setattr(T, "gelu", _skewed_gelu)
    r = check_case("stl", 0)
    assert not r.passed and r.error > 10 * TOL


def test_a_dropped_gradient_is_caught(monkeypatch):
    real = T.leaky_relu

    def no_grad_leaky(x, slope=0.2):
        out = real(x, slope)
        return T.record(out.data, (x,), lambda g: (None,), "leaky_relu")

    monkeypatch.setattr(T, "leaky_relu", no_grad_leaky)
    assert not check_case("frequency_block", 1).passed


def test_suite_reports_each_result():
    seen = []
    results = run_suite(seeds=(4,), names=["charbonnier_loss"], report=seen.append)
    assert seen == results and len(results) == 1 and results[0].seed == 4


def test_kink_refinement_shrinks_the_step():
    # |x| has its kink at 0; a stencil centred near it must be re-measured with a smaller step
    x = T.Tensor(np.array([2e-6, 1.0]), requires_grad=True, dtype=np.float64)
    case = gradcheck.Case(lambda: T.tsum(T.leaky_relu(x, -1.0)), {"x": x}, exhaustive=("x",))
    flat = x.data.reshape(-1)
    f0 = case.loss().item()
    slope, kinked = gradcheck._central(case, flat, 0, f0, gradcheck.STEP)
    assert slope == pytest.approx(1.0, abs=1e-6) and not kinked
