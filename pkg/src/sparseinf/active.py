"""Pool-based active learning driven by the linearized predictive variance."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import net
from .posterior import PosteriorConfig, acquire, build_posterior

STRATEGIES = ("variance", "random")


@dataclass
class ActiveConfig:
    n_initial: int = 10
    n_pool: int = 200
    n_test: int = 200
    iterations: int = 10
    hidden: int = 7
    activation: str = "tanh"
    initial_epochs: int = 4000
    refit_epochs: int = 1000
    lr: float = 0.01
    warm_start: bool = True  # False: every refit starts from the same initial weights
    standardize: bool = True  # train on x / 4 and y / std(initial y); RMSE stays in data units
    posterior: PosteriorConfig = field(default_factory=lambda: PosteriorConfig(tau=1.0))
    n_scale_by_train_size: bool = True  # N_scale := current training-set size


@dataclass
class ActiveTrajectory:
    seed: int
    strategy: str
    rank: str
    rmse: list[float]
    picked: list[int]
    stopped_early: bool = False


def toy_data(rng: np.random.Generator, n: int, low: float = -4.0, high: float = 4.0):
    """Cubic toy regression: ``x ~ U(low, high)``, ``y = x^3 + N(0, 3^2)``."""
    x = rng.uniform(low, high, size=(n, 1))
    y = x**3 + rng.normal(0.0, 3.0, size=(n, 1))
    return x, y


def _rmse(spec, weights, X, y) -> float:
    out, _ = net.forward(spec, weights, X)
    return float(np.sqrt(np.mean((out - y) ** 2)))


def run_active(seed: int, strategy: str, config: ActiveConfig | None = None, rank: str | int = "full") -> ActiveTrajectory:
    """One acquisition trajectory; RMSE is recorded before the first and after every pick.

    The data split and the network initialisation depend only on ``seed``, so
    the strategies and ranks compared under one seed start from the same state.
    """
    config = config or ActiveConfig()
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    data_rng, init_rng, pick_rng, post_rng = np.random.default_rng(seed).spawn(4)
    X_all, y_all = toy_data(data_rng, config.n_initial + config.n_pool)
    X_test, y_test = toy_data(data_rng, config.n_test)
    if config.standardize:
        # the scales come from the input range and the initial labels only
        x_scale, y_scale = 4.0, float(np.std(y_all[: config.n_initial])) or 1.0
        X_all, X_test = X_all / x_scale, X_test / x_scale
        y_all, y_test = y_all / y_scale, y_test / y_scale
    else:
        y_scale = 1.0
    train = list(range(config.n_initial))
    pool = list(range(config.n_initial, config.n_initial + config.n_pool))

    spec = net.NetworkSpec((1, config.hidden, 1), config.activation, "mse")
    tcfg = net.TrainConfig(lr=config.lr, epochs=config.initial_epochs, seed=int(init_rng.integers(2**31)))
    weights = net.train_map(spec, X_all[train], y_all[train], tcfg).weights
    init = net.init_weights(spec, np.random.default_rng(tcfg.seed))
    rmse = [y_scale * _rmse(spec, weights, X_test, y_test)]
    picked: list[int] = []
    pcfg = replace(config.posterior, rank_K=rank)
    refit = replace(tcfg, epochs=config.refit_epochs)
    for _ in range(config.iterations):
        if not pool:
            return ActiveTrajectory(seed, strategy, str(rank), rmse, picked, stopped_early=True)
        if strategy == "variance":
            if config.n_scale_by_train_size:
                pcfg = replace(pcfg, N_scale=float(len(train)))
            post = build_posterior(spec, weights, X_all[train], y_all[train], pcfg, post_rng)
            j = acquire(post, X_all[pool])
        else:
            j = int(pick_rng.integers(len(pool)))
        idx = pool.pop(j)
        train.append(idx)
        picked.append(idx)
        if config.warm_start:
            weights = net.train_map(spec, X_all[train], y_all[train], refit, weights=weights).weights
        else:
            weights = net.train_map(spec, X_all[train], y_all[train], tcfg, weights=init).weights
        rmse.append(y_scale * _rmse(spec, weights, X_test, y_test))
    return ActiveTrajectory(seed, strategy, str(rank), rmse, picked)


def sign_test_p(wins: int, trials: int) -> float:
    """One-sided sign-test p-value ``P(X >= wins)`` for ``X ~ Binomial(trials, 1/2)``."""
    from scipy.stats import binom

    return float(binom.sf(wins - 1, trials, 0.5))
