import math
import os
import subprocess

import numpy as np
import pytest

import riceem


def test_bessel_helpers_small_argument():
    # I0(x) = 1 + x^2/4 + x^4/64 + ...
    x = 0.1
    series = 1.0 + x * x / 4.0 + x**4 / 64.0 + x**6 / 2304.0
    assert riceem.log_bessel_i0(x) == pytest.approx(math.log(series), rel=1e-12)
    # I1(x)/I0(x) ~ x/2 - x^3/16 for small x
    assert riceem.bessel_ratio_i1_i0(1e-4) == pytest.approx(5e-5, rel=1e-6)


def test_rician_density_integrates_to_one():
    signal, sigma_sq = 3.0, 2.0
    ys = np.linspace(1e-6, 30.0, 60001)
    dens = np.exp([riceem.rician_log_density(y, signal, sigma_sq) for y in ys])
    assert float(np.sum((dens[1:] + dens[:-1]) * np.diff(ys)) / 2.0) == pytest.approx(1.0, abs=1e-6)


def test_sampling_is_seeded():
    a = riceem.sample_rician(10.0, 4.0, 100, 5)
    b = riceem.sample_rician(10.0, 4.0, 100, 5)
    assert a == b
    # E[Y^2] = S^2 + 2 sigma^2
    many = np.asarray(riceem.sample_rician(10.0, 4.0, 20000, 11))
    assert np.mean(many**2) == pytest.approx(108.0, rel=0.02)


def test_fit_order2_recovers_truth():
    scheme = riceem.make_scheme(12, [0, 250, 500, 1000, 1500, 2000, 3000], 2)
    truth = riceem.fixture_truth(2, "low", seed=3)
    y = riceem.synthesize(scheme, truth)
    report = riceem.fit_mle(scheme, y, order=2)
    assert report.converged
    assert report.s0_sq == pytest.approx(truth.s0**2, rel=0.05)
    assert report.sigma_sq == pytest.approx(truth.sigma_sq, rel=0.3)
    err = np.linalg.norm(report.theta - truth.theta) / np.linalg.norm(truth.theta)
    assert err < 0.05
    trace = np.asarray(report.objective_trace)
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[1:]))


def test_baselines_and_map_agree_roughly():
    scheme = riceem.make_scheme(12, [0, 250, 500, 1000, 1500, 2000, 3000], 2)
    truth = riceem.fixture_truth(2, "low", seed=4)
    y = riceem.synthesize(scheme, truth)
    mle = riceem.fit_mle(scheme, y, order=2)
    map_ = riceem.fit_map(scheme, y, order=2)
    direct = riceem.fit_rician_direct(scheme, y, order=2)
    wls = riceem.fit_wls(scheme, y, order=2, b_cutoff=1000.0)
    assert direct.converged
    assert np.linalg.norm(direct.theta - mle.theta) <= 1e-3 * np.linalg.norm(mle.theta)
    assert np.linalg.norm(map_.theta - mle.theta) <= 1e-2 * np.linalg.norm(mle.theta)
    assert wls.method == "wls-trunc"
    z = scheme.design(2)
    ll = riceem.marginal_loglik(z, y, mle.theta, mle.s0_sq, mle.sigma_sq)
    assert ll == pytest.approx(mle.final_loglik, rel=1e-12)


def test_cli_roundtrip_in_process(tmp_path):
    data = tmp_path / "d.csv"
    res = tmp_path / "r.csv"
    code, out, err = riceem.run_cli(["simulate", "--seed", "2", "--order", "2", "--voxels", "2", "--out", str(data)])
    assert code == 0, err
    code, out, err = riceem.run_cli(["fit", str(data), "--order", "2", "--out", str(res)])
    assert code == 0, err
    assert "2 converged" in out
    code, _, err = riceem.run_cli(["fit", str(tmp_path / "missing.csv")])
    assert code == 5
    assert err.startswith("riceem: error[io]:")


@pytest.mark.skipif("RICEEM_CLI" not in os.environ, reason="CLI binary path not provided")
def test_cli_binary_usage_error():
    proc = subprocess.run([os.environ["RICEEM_CLI"], "fit"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "error[usage]" in proc.stderr
