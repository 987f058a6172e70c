"""Per-group binary classifiers: training, reduced prediction, persistence.

Each group gets an L2-regularized logistic regression. The default solver is
seeded SGD with per-epoch shuffling; ``solver="lbfgs"`` minimizes the same
objective to high precision instead.
"""
from __future__ import annotations

import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.optimize
import scipy.sparse as sp
from scipy.special import expit, log1p
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import SGDClassifier

from . import codec
from .dataset_io import Dataset
from .gt_construct import GroupTestingMatrix

FORMAT_VERSION = 1
CONSTANT_BIAS = 30.0


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "logistic"
    l2: float = 1e-4
    epochs: int = 20
    learning_rate: str = "invscaling"  # eta_t = eta0 / t**power_t
    eta0: float = 0.1
    power_t: float = 0.25
    solver: str = "sgd"
    seed: int = 0

    def __post_init__(self):
        if self.loss != "logistic":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.solver not in ("sgd", "lbfgs"):
            raise ValueError(f"unknown solver {self.solver!r}")


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    train_meta: dict = field(default_factory=dict)

    def margin(self, X) -> np.ndarray:
        return np.asarray(X @ self.weights).ravel() + self.bias

    @classmethod
    def constant(cls, p: int, positive: bool) -> "LinearModel":
        return cls(np.zeros(p), CONSTANT_BIAS if positive else -CONSTANT_BIAS, {"epochs": 0, "constant": True})


def group_seed(seed: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, j]).generate_state(1)[0])


def _sample_weights(t: np.ndarray) -> np.ndarray:
    n = len(t)
    pos = int(t.sum())
    w = np.ones(n)
    w[t] = n / (2.0 * pos)
    return w


def _objective(X, t, sw, w, bias, l2) -> float:
    m = np.asarray(X @ w).ravel() + bias
    s = np.where(t, 1.0, -1.0)
    z = -s * m
    loss = np.where(z > 0, z + log1p(np.exp(-z)), log1p(np.exp(z)))
    return float(np.dot(sw, loss) / len(t) + 0.5 * l2 * np.dot(w, w))


def _fit_lbfgs(X, t, sw, l2):
    n, p = X.shape
    s = np.where(t, 1.0, -1.0)

    def f(theta):
        w, b = theta[:p], theta[p]
        m = np.asarray(X @ w).ravel() + b
        z = -s * m
        loss = np.where(z > 0, z + log1p(np.exp(-z)), log1p(np.exp(z)))
        g_m = -s * expit(z) * sw / n
        grad = np.empty(p + 1)
        grad[:p] = np.asarray(X.T @ g_m).ravel() + l2 * w
        grad[p] = g_m.sum()
        return float(np.dot(sw, loss) / n + 0.5 * l2 * np.dot(w, w)), grad

    res = scipy.optimize.minimize(f, np.zeros(p + 1), jac=True, method="L-BFGS-B",
                                  options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-10})
    return res.x[:p], float(res.x[p]), int(res.nit)


def train_binary(X, targets, cfg: TrainConfig, seed: int | None = None, group: int | None = None) -> LinearModel:
    """Fit one logistic model; positives are weighted by n / (2 * #positives)."""
    X = sp.csr_matrix(X)
    t = np.asarray(targets).astype(bool).ravel()
    n, p = X.shape
    if len(t) != n:
        raise ValueError(f"{len(t)} targets for {n} rows")
    pos = int(t.sum())
    if pos == 0 or pos == n:
        return LinearModel.constant(p, positive=pos == n)
    sw = _sample_weights(t)
    seed = cfg.seed if seed is None else seed
    where = f"group {group}" if group is not None else "binary model"
    if cfg.solver == "lbfgs":
        w, b, iters = _fit_lbfgs(X, t, sw, cfg.l2)
    else:
        clf = SGDClassifier(
            loss="log_loss", penalty="l2", alpha=cfg.l2, max_iter=cfg.epochs, tol=None,
            shuffle=True, random_state=seed % (2**32), learning_rate=cfg.learning_rate,
            eta0=cfg.eta0, power_t=cfg.power_t, fit_intercept=True,
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                clf.fit(X, t.astype(np.int8), sample_weight=sw)
        except (ValueError, FloatingPointError) as exc:
            raise TrainingError(f"{where}: training diverged ({exc})") from exc
        w, b, iters = clf.coef_.ravel().copy(), float(clf.intercept_[0]), int(clf.n_iter_)
    loss = _objective(X, t, sw, w, b, cfg.l2)
    if not (np.isfinite(loss) and np.all(np.isfinite(w)) and np.isfinite(b)):
        raise TrainingError(f"{where}: non-finite loss or weights (learning rate too large?)")
    return LinearModel(w, b, {"epochs": iters, "final_loss": loss})


@dataclass
class ClassifierEnsemble:
    models: list
    p: int
    config: TrainConfig

    def __post_init__(self):
        self._coef = None

    @property
    def m(self) -> int:
        return len(self.models)

    def coef(self) -> tuple[sp.csr_matrix, np.ndarray]:
        if self._coef is None:
            w = np.vstack([mdl.weights for mdl in self.models]) if self.models else np.zeros((0, self.p))
            self._coef = (sp.csr_matrix(w), np.array([mdl.bias for mdl in self.models]))
        return self._coef


def train_ensemble(ds: Dataset, a: GroupTestingMatrix, cfg: TrainConfig, threads: int = 1,
                   groups=None) -> ClassifierEnsemble:
    """Train one model per group on the reduced labels A OR y_i."""
    if a.d != ds.d:
        raise ValueError(f"dimension mismatch: A has d={a.d}, dataset has d={ds.d}")
    z = reduce_targets(ds, a)
    idx = range(a.m) if groups is None else groups

    def fit(j):
        col = z[:, j].toarray().ravel() > 0
        return train_binary(ds.features, col, cfg, seed=group_seed(cfg.seed, j), group=j)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            models = list(pool.map(fit, idx))
    else:
        models = [fit(j) for j in idx]
    return ClassifierEnsemble(models, ds.p, cfg)


def reduce_targets(ds: Dataset, a: GroupTestingMatrix) -> sp.csc_matrix:
    return codec.reduce_many(a, ds.labels).tocsc()


def predict_margins(ens: ClassifierEnsemble, X) -> np.ndarray:
    X = sp.csr_matrix(X)
    if X.shape[1] != ens.p:
        raise ValueError(f"dimension mismatch: x has p={X.shape[1]}, ensemble expects p={ens.p}")
    w, b = ens.coef()
    return (X @ w.T).toarray() + b[None, :]


def predict_reduced(ens: ClassifierEnsemble, x) -> codec.ReducedLabel:
    """Margins for one instance; a group bit is on iff its margin is positive."""
    x = sp.csr_matrix(x)
    if x.shape[0] != 1:
        x = x.reshape(1, -1)
    margins = predict_margins(ens, x)[0]
    return codec.ReducedLabel((margins > 0).astype(np.uint8), margins)


# -- persistence -------------------------------------------------------------

def write_weights(ens: ClassifierEnsemble, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for j, mdl in enumerate(ens.models):
            nz = np.flatnonzero(mdl.weights)
            feats = " ".join(f"{i}:{mdl.weights[i]:.17g}" for i in nz)
            fh.write(f"{j}\t{mdl.bias:.17g}\t{feats}\n")


def read_weights(path, p: int) -> list[LinearModel]:
    models = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3 or int(parts[0]) != len(models):
                raise ValueError(f"{path}:{lineno}: malformed weight row")
            w = np.zeros(p)
            for tok in parts[2].split():
                i, v = tok.split(":")
                w[int(i)] = float(v)
            models.append(LinearModel(w, float(parts[1])))
    return models


def save_model(directory, ens: ClassifierEnsemble, a: GroupTestingMatrix, meta: dict) -> None:
    from .gt_construct import write_matrix_market

    os.makedirs(directory, exist_ok=True)
    record = {"format_version": FORMAT_VERSION, "m": a.m, "d": a.d, "p": ens.p, "kind": a.kind,
              "gt_params": a.params, "train_config": asdict(ens.config)}
    record.update(meta)
    with open(os.path.join(directory, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1, sort_keys=True, default=_jsonable)
        fh.write("\n")
    write_matrix_market(a, os.path.join(directory, "A.mtx"))
    write_weights(ens, os.path.join(directory, "weights.tsv"))


def load_model(directory) -> tuple[ClassifierEnsemble, GroupTestingMatrix, dict]:
    from .gt_construct import read_matrix_market

    with open(os.path.join(directory, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format {meta.get('format_version')}")
    a = read_matrix_market(os.path.join(directory, "A.mtx"))
    models = read_weights(os.path.join(directory, "weights.tsv"), meta["p"])
    if len(models) != a.m:
        raise ValueError(f"weights.tsv has {len(models)} rows, A has m={a.m}")
    cfg = TrainConfig(**meta["train_config"])
    return ClassifierEnsemble(models, meta["p"], cfg), a, meta


def _jsonable(x):
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")
