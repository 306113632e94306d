"""Linear mixed-effects models of per-query sARE, fitted by full maximum likelihood.

Every query contributes one observation per predictor, and predictor position
enters as a numeric covariate.  Three nested models are supported:

* ``average``: fixed intercept, random intercept per query;
* ``qpp``: adds a fixed slope on predictor index and a random slope;
* ``full``: adds query-type dummies on the intercept and/or the slope.

Fixed effects and the residual variance are profiled out in closed form, so
the optimiser only searches the relative Cholesky factor of the random-effects
covariance (one or three numbers).
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, Sequence

import numpy as np
from scipy import linalg, optimize, stats

from .core import DataError, NumericalError, QueryTypeMap, SareTable

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-10
ALPHA = 0.05
WALD_Z = stats.norm.ppf(1 - ALPHA / 2)
GRAD_RTOL = 1e-5


@dataclass(frozen=True)
class LmeDesign:
    """Long-format rows ``(query_id, predictor_index, query_type, sare)``."""

    query_ids: tuple[str, ...]
    predictor_index: np.ndarray
    query_types: tuple[str, ...]
    sare: np.ndarray
    predictor_order: tuple[str, ...]
    reference_type: str
    covariate_offset: float = 0.0

    def __post_init__(self):
        n = len(self.query_ids)
        idx = np.asarray(self.predictor_index, dtype=np.int64)
        y = np.asarray(self.sare, dtype=np.float64)
        if not (len(idx) == len(y) == len(self.query_types) == n):
            raise DataError("design columns differ in length")
        if not np.all(np.isfinite(y)):
            raise DataError("design contains non-finite sARE values")
        object.__setattr__(self, "predictor_index", idx)
        object.__setattr__(self, "sare", y)
        object.__setattr__(self, "query_ids", tuple(self.query_ids))
        object.__setattr__(self, "query_types", tuple(self.query_types))
        object.__setattr__(self, "predictor_order", tuple(self.predictor_order))

    @property
    def num_predictors(self) -> int:
        return len(self.predictor_order)

    @property
    def covariate(self) -> np.ndarray:
        return self.predictor_index + self.covariate_offset

    def recentered(self, offset: float) -> "LmeDesign":
        return LmeDesign(
            self.query_ids, self.predictor_index, self.query_types, self.sare,
            self.predictor_order, self.reference_type, self.covariate_offset + offset,
        )

    def grouped(self):
        """Queries in sorted order with their types, covariates (J,) and responses (n, J)."""
        qids = sorted(set(self.query_ids))
        pos = {q: i for i, q in enumerate(qids)}
        J = self.num_predictors
        y = np.full((len(qids), J), np.nan)
        types = [None] * len(qids)
        for q, j, t, v in zip(self.query_ids, self.predictor_index, self.query_types, self.sare):
            i = pos[q]
            if not np.isnan(y[i, j]):
                raise DataError(f"query {q!r} has two rows for predictor index {j}")
            y[i, j] = v
            if types[i] not in (None, t):
                raise DataError(f"query {q!r} has inconsistent types")
            types[i] = t
        if np.any(np.isnan(y)):
            bad = [qids[i] for i in np.where(np.isnan(y).any(axis=1))[0]]
            raise DataError(f"queries missing some predictor rows: {bad[:5]}")
        x = np.arange(J, dtype=np.float64) + self.covariate_offset
        return qids, types, x, y


def build_design(
    sare: SareTable, types: QueryTypeMap, predictor_order: Sequence[str]
) -> LmeDesign:
    order = tuple(predictor_order)
    if len(set(order)) != len(order):
        raise DataError("predictor order has duplicates")
    missing_cols = [p for p in order if p not in sare.names]
    if missing_cols:
        raise DataError(f"predictors not in sARE table: {missing_cols}")
    untyped = [q for q in sare.query_ids if q not in types]
    if untyped:
        raise DataError(f"queries without a query type: {untyped}")
    cols = [sare.names.index(p) for p in order]
    qids, idx, tlist, vals = [], [], [], []
    for q in sare.query_ids:
        row = sare.values[q]
        for j, c in enumerate(cols):
            if math.isnan(row[c]):
                raise DataError(f"missing sARE for query {q!r}, predictor {order[j]!r}")
            qids.append(q)
            idx.append(j)
            tlist.append(types[q])
            vals.append(row[c])
    counts = Counter(types[q] for q in sare.query_ids)
    if not counts:
        raise DataError("sARE table is empty")
    reference = min(counts, key=lambda t: (-counts[t], t))
    return LmeDesign(tuple(qids), np.array(idx), tuple(tlist), np.array(vals), order, reference)


class Model(str, Enum):
    AVERAGE = "average"
    QPP = "qpp"
    FULL = "full"


@dataclass(frozen=True)
class LmeSpec:
    model: Model
    type_main: bool = False
    type_slope: bool = False
    random: str | None = None  # "none", "intercept" or "slope"; default follows model

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        if self.model is not Model.FULL and (self.type_main or self.type_slope):
            raise DataError("query-type terms belong to the full model")
        if self.model is Model.FULL and not (self.type_main or self.type_slope):
            object.__setattr__(self, "type_main", True)
            object.__setattr__(self, "type_slope", True)
        if self.random is None:
            object.__setattr__(self, "random", "intercept" if self.model is Model.AVERAGE else "slope")
        if self.random not in ("none", "intercept", "slope"):
            raise DataError(f"unknown random-effects structure {self.random!r}")

    @classmethod
    def average(cls):
        return cls(Model.AVERAGE)

    @classmethod
    def qpp(cls):
        return cls(Model.QPP)

    @classmethod
    def full(cls, main: bool = True, interaction: bool = True):
        return cls(Model.FULL, type_main=main, type_slope=interaction)

    @property
    def name(self) -> str:
        if self.model is not Model.FULL:
            return self.model.value
        if self.type_main and self.type_slope:
            return "full"
        return "full_main" if self.type_main else "full_interaction"

    @property
    def slope(self) -> bool:
        return self.model is not Model.AVERAGE

    @property
    def n_theta(self) -> int:
        return {"none": 0, "intercept": 1, "slope": 3}[self.random]


@dataclass
class LmeFit:
    model: str
    coef_names: list[str]
    gamma: np.ndarray
    se: np.ndarray
    psi: np.ndarray
    sigma2_eps: float
    loglik: float
    deviance: float
    converged: bool
    theta: np.ndarray
    n_queries: int
    n_obs: int
    grad_max: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def z(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.gamma / self.se

    @property
    def n_params(self) -> int:
        return len(self.gamma) + len(self.theta) + 1

    @property
    def sigma2_0(self) -> float:
        return float(self.psi[0, 0]) if self.psi.size else 0.0

    @property
    def sigma2_1(self) -> float | None:
        return float(self.psi[1, 1]) if self.psi.shape[0] > 1 else None

    @property
    def sigma_01(self) -> float | None:
        return float(self.psi[0, 1]) if self.psi.shape[0] > 1 else None

    @property
    def gradient_ok(self) -> bool:
        return self.grad_max < GRAD_RTOL * max(1.0, abs(self.loglik))

    def coef(self, name: str) -> float:
        return float(self.gamma[self.coef_names.index(name)])

    def to_dict(self) -> dict:
        z = self.z
        return {
            "model": self.model,
            "coefficients": [
                {"term": n, "estimate": float(g), "se": float(s), "z": float(zz),
                 "p": float(2 * stats.norm.sf(abs(zz))) if np.isfinite(zz) else None}
                for n, g, s, zz in zip(self.coef_names, self.gamma, self.se, z)
            ],
            "variance_components": {
                "sigma2_eps": self.sigma2_eps,
                "sigma2_0": self.sigma2_0,
                "sigma2_1": self.sigma2_1,
                "sigma_01": self.sigma_01,
            },
            "loglik": self.loglik,
            "deviance": self.deviance,
            "n_params": self.n_params,
            "converged": self.converged,
            "gradient_max": self.grad_max,
            "n_queries": self.n_queries,
            "n_obs": self.n_obs,
            "diagnostics": self.diagnostics,
        }


# model matrices -------------------------------------------------------------


def _matrices(design: LmeDesign, spec: LmeSpec):
    qids, types, x, y = design.grouped()
    n, J = y.shape
    if n < 2:
        raise DataError(f"need at least 2 queries, got {n}")
    if spec.slope and J < 2:
        raise DataError("slope models need at least 2 predictors")
    names = ["(Intercept)"]
    cols = [np.ones((n, J))]
    if spec.slope:
        names.append("QPP")
        cols.append(np.broadcast_to(x, (n, J)))
    if spec.type_main or spec.type_slope:
        counts = Counter(types)
        if len(counts) < 2:
            raise DataError("the full model needs at least 2 query types")
        for t, c in sorted(counts.items()):
            if c < 2:
                raise DataError(f"query type {t!r} has only {c} query; type effects are not identifiable")
        others = sorted(t for t in counts if t != design.reference_type)
        dummies = {t: np.array([[1.0 if ti == t else 0.0] for ti in types]) for t in others}
        if spec.type_main:
            for t in others:
                names.append(f"type[{t}]")
                cols.append(np.broadcast_to(dummies[t], (n, J)))
        if spec.type_slope:
            for t in others:
                names.append(f"type[{t}]:QPP")
                cols.append(dummies[t] * x[None, :])
    X = np.stack(cols, axis=2)  # (n, J, p)
    if spec.random == "none":
        Z = np.zeros((J, 0))
    elif spec.random == "intercept":
        Z = np.ones((J, 1))
    else:
        Z = np.column_stack([np.ones(J), x])
    flat = X.reshape(n * J, -1)
    if np.linalg.matrix_rank(flat) < flat.shape[1]:
        raise DataError("fixed-effects design is rank deficient")
    return names, X, y, Z


def _factor(theta: np.ndarray, q: int) -> np.ndarray:
    L = np.zeros((q, q))
    if q == 1:
        L[0, 0] = theta[0]
    elif q == 2:
        L[0, 0], L[1, 0], L[1, 1] = theta
    return L


class _Profile:
    """Profiled ML objective for one design and model specification.

    All queries share the covariate vector, so the marginal covariance is the
    same ``J x J`` matrix for every query and the likelihood only needs the
    cross-product tensors accumulated once here.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, Z: np.ndarray):
        self.X, self.Z = X, Z
        self.n, self.J, self.p = X.shape
        self.q = Z.shape[1]
        self.N = self.n * self.J
        # centring the response keeps the quadratic forms well conditioned;
        # the intercept column absorbs the shift
        self.shift = float(np.mean(y))
        self.y = y - self.shift
        JJ = self.J * self.J
        self.XX = np.einsum("ija,ikb->abjk", X, X).reshape(self.p * self.p, JJ)
        self.Xy = np.einsum("ija,ik->ajk", X, self.y).reshape(self.p, JJ)
        self.yy = np.einsum("ij,ik->jk", self.y, self.y).reshape(JJ)
        self._eye = np.eye(self.J)

    def v0(self, theta):
        L = _factor(theta, self.q)
        ZL = self.Z @ L
        return ZL @ ZL.T + self._eye

    def _inverse(self, theta):
        C = np.linalg.cholesky(self.v0(theta))
        Ci = linalg.solve_triangular(C, self._eye, lower=True, check_finite=False)
        return (Ci.T @ Ci).reshape(-1), 2.0 * float(np.sum(np.log(np.diag(C))))

    def _products(self, W):
        A = (self.XX @ W).reshape(self.p, self.p)
        return A, self.Xy @ W, float(self.yy @ W)

    def gls(self, theta):
        """GLS fixed effects, residual quadratic form, log|V0| and X'V0^-1 X at ``theta``."""
        W, logdet = self._inverse(theta)
        A, c, yWy = self._products(W)
        beta = np.linalg.solve(A, c)
        rss = max(yWy - float(beta @ c), 0.0)
        return beta, rss, logdet, A

    def coefficients(self, beta):
        out = beta.copy()
        out[0] += self.shift
        return out

    def loglik(self, theta) -> float:
        _, rss, logdet, _ = self.gls(theta)
        return self._ll(rss, logdet)

    def _ll(self, rss, logdet):
        s2 = max(rss / self.N, SIGMA2_FLOOR)
        return -0.5 * (self.N * math.log(2 * math.pi * s2) + self.n * logdet + rss / s2)

    def full_loglik(self, beta, theta, log_s2) -> float:
        """Unprofiled log-likelihood in centred coordinates, for the observed information."""
        W, logdet = self._inverse(theta)
        A, c, yWy = self._products(W)
        quad = yWy - 2.0 * float(beta @ c) + float(beta @ A @ beta)
        s2 = math.exp(log_s2)
        return -0.5 * (self.N * math.log(2 * math.pi * s2) + self.n * logdet + quad / s2)


def _starts(prof: _Profile, spec: LmeSpec) -> list[np.ndarray]:
    if spec.n_theta == 0:
        return [np.zeros(0)]
    # moment-based start from per-query OLS of the response on the random design
    coefs, *_ = np.linalg.lstsq(prof.Z, prof.y.T, rcond=None)
    resid = prof.y.T - prof.Z @ coefs
    dof = max(prof.J - prof.q, 1)
    s2 = max(float(np.sum(resid**2)) / (prof.n * dof), 1e-8)
    cov = np.atleast_2d(np.cov(coefs)) if prof.n > 1 else np.eye(prof.q) * s2
    zinv = np.linalg.inv(prof.Z.T @ prof.Z)
    rel = (cov - s2 * zinv) / s2
    w, v = np.linalg.eigh((rel + rel.T) / 2)
    rel = (v * np.maximum(w, 1e-4)) @ v.T
    L = np.linalg.cholesky(rel)
    base = L[np.tril_indices(prof.q)]
    diag_only = np.diag(np.sqrt(np.diag(rel)))[np.tril_indices(prof.q)]
    tiny = (np.eye(prof.q) * 1e-2)[np.tril_indices(prof.q)]
    return [base, base * 3.0, base / 3.0, diag_only, tiny]


def _numgrad(f, x, rel=1e-5):
    g = np.zeros_like(x)
    for i in range(len(x)):
        h = rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _numhess(f, x, steps):
    k = len(x)
    H = np.zeros((k, k))
    f0 = f(x)
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = steps[i]
        H[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / steps[i] ** 2
        for j in range(i):
            ej = np.zeros(k)
            ej[j] = steps[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * steps[i] * steps[j])
    return H


def _minimize(obj, x0):
    """Quasi-Newton search, then a simplex polish from the best point found."""
    best = optimize.minimize(obj, x0, method="L-BFGS-B", options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-9})
    if not np.isfinite(best.fun):
        best = optimize.minimize(obj, x0, method="Nelder-Mead", options={"adaptive": True})
    polish = optimize.minimize(
        obj, best.x, method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": 1e-12, "maxfev": 2000, "adaptive": True},
    )
    return polish if polish.fun <= best.fun else best


def fit(design: LmeDesign, spec: LmeSpec, warm_start: Sequence[float] | None = None) -> LmeFit:
    """Full-ML fit; variance parameters by multi-start simplex search."""
    names, X, y, Z = _matrices(design, spec)
    prof = _Profile(X, y, Z)

    def obj(theta):
        try:
            return -prof.loglik(theta)
        except np.linalg.LinAlgError:
            return math.inf

    starts = _starts(prof, spec)
    if warm_start is not None and spec.n_theta:
        starts.append(np.asarray(warm_start, dtype=np.float64))
    if spec.n_theta == 0:
        theta, success, tried = np.zeros(0), True, []
    else:
        tried = []
        best = None
        for x0 in starts:
            res = _minimize(obj, x0)
            tried.append(float(-res.fun))
            if best is None or res.fun < best.fun:
                best = res
        theta = best.x
        # agreement between independent starts stands in for the optimiser's own flag
        agree = sum(1 for v in tried if abs(v + best.fun) <= 1e-6 * max(1.0, abs(best.fun)))
        success = agree >= 2 or len(tried) == 1

    beta, rss, logdet, info = prof.gls(theta)
    ll = prof._ll(rss, logdet)
    s2_raw = rss / prof.N
    floored = s2_raw < SIGMA2_FLOOR
    s2 = max(s2_raw, SIGMA2_FLOOR)
    L = _factor(theta, prof.q)
    psi = s2 * (L @ L.T)
    grad_max = float(np.max(np.abs(_numgrad(prof.loglik, theta)))) if spec.n_theta else 0.0

    se = _standard_errors(prof, beta, theta, s2, info)
    fitted = LmeFit(
        model=spec.name, coef_names=names, gamma=prof.coefficients(beta), se=se, psi=psi, sigma2_eps=s2,
        loglik=ll, deviance=-2.0 * ll, converged=False, theta=np.asarray(theta),
        n_queries=prof.n, n_obs=prof.N, grad_max=grad_max,
        diagnostics={"starts_agree": success, "sigma2_floor_hit": bool(floored),
                     "start_logliks": tried},
    )
    fitted.converged = bool(success and not floored and fitted.gradient_ok)
    if not fitted.converged:
        log.warning("%s fit did not converge cleanly: %s", spec.name, fitted.diagnostics)
    return fitted


def _standard_errors(prof: _Profile, beta, theta, s2, info_gls) -> np.ndarray:
    """Fixed-effect SEs from the numerically differentiated observed information.

    The parameters are ``(beta, theta, log sigma^2)``.  The beta block of the
    inverse information is taken via a Schur complement; a singular
    variance block (boundary optimum) is handled with a pseudo-inverse.
    """
    p = len(beta)
    gls_cov = np.linalg.pinv(info_gls) * s2
    if s2 <= SIGMA2_FLOOR:
        return np.sqrt(np.maximum(np.diag(gls_cov), 0.0))
    phi = np.concatenate([beta, theta, [math.log(s2)]])
    sd = math.sqrt(s2)
    steps = np.concatenate([
        0.1 * sd / np.sqrt(np.maximum(np.diag(info_gls) / prof.N, 1e-12)),
        1e-4 * np.maximum(1.0, np.abs(theta)),
        [1e-4],
    ])

    def nll(v):
        try:
            return -prof.full_loglik(v[:p], v[p:-1], v[-1])
        except np.linalg.LinAlgError:
            return math.inf

    H = _numhess(nll, phi, steps)
    if not np.all(np.isfinite(H)):
        return np.sqrt(np.maximum(np.diag(gls_cov), 0.0))
    Hbb, Hbt, Htt = H[:p, :p], H[:p, p:], H[p:, p:]
    info = Hbb - Hbt @ np.linalg.pinv(Htt, rcond=1e-10, hermitian=True) @ Hbt.T
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        cov = gls_cov
    d = np.diag(cov)
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        d = np.diag(gls_cov)
    return np.sqrt(np.maximum(d, 0.0))


def warm_theta(smaller: LmeFit, spec: LmeSpec) -> np.ndarray | None:
    """Embed a nested fit's variance parameters into a larger random structure."""
    t = smaller.theta
    if spec.n_theta == len(t):
        return t.copy()
    if spec.n_theta == 3 and len(t) == 1:
        return np.array([t[0], 0.0, 0.0])
    if spec.n_theta == 3 and len(t) == 0:
        return np.zeros(3)
    return None


# variance decomposition -----------------------------------------------------


@dataclass(frozen=True)
class VarianceDecomposition:
    pseudo_r2_eps: float | None
    pseudo_r2_0: float | None
    pseudo_r2_1: float | None

    @property
    def negative(self) -> list[str]:
        return [k for k, v in self.to_dict().items() if v is not None and v < 0]

    def to_dict(self) -> dict:
        return {
            "pseudo_r2_eps": self.pseudo_r2_eps,
            "pseudo_r2_0": self.pseudo_r2_0,
            "pseudo_r2_1": self.pseudo_r2_1,
        }


def _reduction(before: float | None, after: float | None) -> float | None:
    if before is None or after is None or abs(before) < 1e-12:
        return None
    return (before - after) / before


def pseudo_r2(fit_average: LmeFit, fit_qpp: LmeFit, fit_full: LmeFit) -> VarianceDecomposition:
    """Proportional variance reductions between the nested models; may be negative."""
    return VarianceDecomposition(
        _reduction(fit_average.sigma2_eps, fit_qpp.sigma2_eps),
        _reduction(fit_qpp.sigma2_0, fit_full.sigma2_0),
        _reduction(fit_qpp.sigma2_1, fit_full.sigma2_1),
    )


# model selection ------------------------------------------------------------


@dataclass
class Step:
    candidate: str
    against: str
    deviance: float
    lrt: float
    df: int
    critical: float
    p_value: float
    max_new_z: float
    new_terms: list[str]
    accepted: bool

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class Selection:
    chosen: LmeFit
    fits: dict[str, LmeFit]
    steps: list[Step]
    decomposition: VarianceDecomposition
    nested_ok: bool

    def report(self, design: LmeDesign | None = None) -> dict:
        out = {
            "chosen_model": self.chosen.model,
            "fits": {k: v.to_dict() for k, v in self.fits.items()},
            "selection": [s.to_dict() for s in self.steps],
            "pseudo_r2": self.decomposition.to_dict(),
            "pseudo_r2_negative": self.decomposition.negative,
            "deviance_nested_ok": self.nested_ok,
            "alpha": ALPHA,
        }
        if design is not None:
            out["predictor_order"] = list(design.predictor_order)
            out["reference_type"] = design.reference_type
            out["covariate_offset"] = design.covariate_offset
        return out


def _compare(current: LmeFit, cand: LmeFit) -> Step:
    new_terms = [n for n in cand.coef_names if n not in current.coef_names]
    df = cand.n_params - current.n_params
    lrt = current.deviance - cand.deviance
    crit = float(stats.chi2.ppf(1 - ALPHA, df))
    pval = float(stats.chi2.sf(max(lrt, 0.0), df))
    zs = [abs(float(cand.z[cand.coef_names.index(t)])) for t in new_terms]
    zs = [z for z in zs if np.isfinite(z)]
    max_z = max(zs) if zs else 0.0
    accepted = lrt > crit and max_z > WALD_Z
    return Step(cand.model, current.model, cand.deviance, lrt, df, crit, pval, max_z, new_terms, accepted)


def select_model(design: LmeDesign) -> Selection:
    """Sequential average -> qpp -> full selection by LRT and Wald tests at 5%."""
    fits: dict[str, LmeFit] = {}
    steps: list[Step] = []
    avg = fits["average"] = fit(design, LmeSpec.average())
    qpp_spec = LmeSpec.qpp()
    qpp = fits["qpp"] = fit(design, qpp_spec, warm_theta(avg, qpp_spec))
    step = _compare(avg, qpp)
    steps.append(step)
    current = qpp if step.accepted else avg

    variants = [LmeSpec.full(True, False), LmeSpec.full(False, True), LmeSpec.full(True, True)]
    accepted = []
    for spec in variants:
        f = fits[spec.name] = fit(design, spec, warm_theta(qpp, spec))
        step = _compare(current, f)
        steps.append(step)
        if step.accepted:
            accepted.append(f)
    if accepted:
        # among accepted full variants prefer the smallest AIC
        current = min(accepted, key=lambda f: (f.deviance + 2 * f.n_params, f.n_params))

    chain = [fits["average"].deviance, fits["qpp"].deviance, fits["full"].deviance]
    nested_ok = all(b <= a + 1e-8 * max(1.0, abs(a)) for a, b in zip(chain, chain[1:]))
    decomp = pseudo_r2(fits["average"], fits["qpp"], fits["full"])
    return Selection(current, fits, steps, decomp, nested_ok)


def write_report(selection: Selection, design: LmeDesign, sink: IO[str], header: dict | None = None) -> None:
    body = selection.report(design)
    if header:
        body = {"meta": header, **body}
    sink.write(json.dumps(body, indent=2, sort_keys=False, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def ensure_nested(selection: Selection) -> None:
    if not selection.nested_ok:
        devs = {k: f.deviance for k, f in selection.fits.items()}
        raise NumericalError(f"deviance increased along the nested chain: {devs}")
