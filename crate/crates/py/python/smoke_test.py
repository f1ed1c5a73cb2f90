"""Smoke test for the spillover_py extension."""

import math

import spillover_py as sp


def main():
    beta = [[0.5, 0.1], [0.2, 0.3]]
    sigma = [[1.0, 0.3], [0.3, 1.0]]

    fevd = sp.gfevd(beta, sigma, horizon=5, labels=["a", "b"])
    for row in fevd.shares:
        assert abs(sum(row) - 1.0) < 1e-12
    summary = fevd.summary()
    assert 0.0 <= summary.tci <= 100.0
    assert abs(sum(summary.net)) < 1e-9
    print("tci", round(summary.tci, 4), summary)

    returns = sp.simulate(beta, sigma, length=600, seed=7)
    assert len(returns) == 600 and len(returns[0]) == 2

    b_hat, _ = sp.fit_static_var(returns)
    assert abs(b_hat[0][0] - 0.5) < 0.15

    path = sp.fit_tvp_var(returns, kappa1=0.99, kappa2=0.96, burn_in=200)
    tci = path.dynamic_tci(horizon=5)
    assert len(tci) == len(path) == 400
    assert all(0.0 <= v <= 100.0 for v in tci)

    stats = sp.describe([r[0] for r in returns])
    assert math.isfinite(stats["jb"]) and stats["kurtosis"] > 0.0

    q = sp.fit_quantile_var(returns, 0.5)
    assert len(q["beta"]) == 2

    mst = summary.minimum_spanning_tree()
    assert len(mst) == 1

    print("spillover_py", sp.__version__, "ok")


if __name__ == "__main__":
    main()
