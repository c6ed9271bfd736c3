#!/usr/bin/env python3
"""Regenerate the synthetic calibration fixture shipped with panelctrl-core.

The values are synthetic: three smooth latent factors, a trending time
effect, and scalar distribution parameters on a log-GSP-per-capita scale.
The factors are rotated so that their pre-period Gram matrix divided by the
pre-period length is the identity.

Usage: python3 scripts/gen_fixture.py crates/core/fixtures
"""
import json
import sys

import numpy as np

T = 105
T0 = 89
J = 3


def main(out_dir):
    t = np.arange(1, T + 1, dtype=float)
    nu = 10.6 + 0.0035 * t + 0.02 * np.sin(2 * np.pi * t / 40.0)

    raw = np.column_stack(
        [
            t / T - 0.5,
            np.sin(2 * np.pi * t / 52.0),
            np.cos(2 * np.pi * t / 30.0) * (t / T),
        ]
    )
    _, r = np.linalg.qr(raw[:T0])
    mu = raw @ np.linalg.inv(r) * np.sqrt(T0)
    gram = mu[:T0].T @ mu[:T0] / T0
    assert np.allclose(gram, np.eye(J), atol=1e-12)

    with open(f"{out_dir}/factor_calibration.csv", "w") as fh:
        fh.write("period,nu,mu1,mu2,mu3\n")
        for i in range(T):
            row = [f"{v:.17g}" for v in (nu[i], *mu[i])]
            fh.write(f"{i + 1}," + ",".join(row) + "\n")

    sd = np.array([0.060, 0.040, 0.030])
    corr = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 1.0]])
    phi_cov = (sd[:, None] * corr * sd[None, :]).tolist()

    params = {
        "version": 1,
        "provenance": "synthetic; generated by scripts/gen_fixture.py",
        "n": 50,
        "t": T,
        "t0": T0,
        "factor": {
            "alpha_mean": 0.0,
            "alpha_sd": 0.25,
            "phi_cov": phi_cov,
            "sigma_eps": 0.015,
            "theta": 0.5,
        },
        "fixed_effects": {
            "alpha_mean": 0.0,
            "alpha_sd": 0.25,
            "sigma_eps": 0.015,
            "theta": 1.5,
        },
        "ar3": {
            "beta0": 0.53,
            "beta": [0.75, 0.15, 0.05],
            "sigma_eps": 0.015,
            "theta": 2.5,
        },
    }
    with open(f"{out_dir}/calibration.json", "w") as fh:
        json.dump(params, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/fixtures")
