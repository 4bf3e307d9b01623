"""Distance and incidence-angle intensity compensation.

The forward model is ``I = eta(R) * I_e * rho * cos(alpha) / R**2`` with a
near-range factor ``eta``. The parameterized correction replaces the
closed-form range factor ``R**2 / eta(R)`` by

    g(R) = (alpha*R**2 + beta*R + gamma) * exp(-lambda*R) / eta(R)

and the compensated intensity is ``I * g(R) / (cos(alpha) * kappa)``.
``fit_params`` estimates one global parameter set from calibration samples
by damped Gauss-Newton.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .projection import DepthImage, ReflectanceImage


class CompensationError(ValueError):
    pass


class GrazingAngleError(CompensationError):
    pass


class InvalidParamsError(CompensationError):
    pass


class RankDeficiencyError(CompensationError):
    pass


@dataclass(frozen=True)
class EtaConstants:
    """Near-range optics: detector radius, range offset, lens diameter, focal length (m)."""

    r_d: float = 0.01
    d: float = 0.05
    D: float = 0.03
    S_d: float = 0.1

    def __post_init__(self):
        for name in ("r_d", "D", "S_d"):
            if not getattr(self, name) > 0:
                raise InvalidParamsError(f"{name} must be > 0")
        if not self.d >= 0:
            raise InvalidParamsError("d must be >= 0")

    def saturation_range(self, exponent=30.0):
        """Range beyond which ``1 - eta`` falls under ``exp(-exponent)``."""
        return math.sqrt(exponent * self.D**2 * self.S_d**2 / (2.0 * self.r_d**2)) - self.d


@dataclass(frozen=True)
class CompensationParams:
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    lam: float = 0.0
    kappa: float = 1.0
    eta: EtaConstants = field(default_factory=EtaConstants)
    c: float = 1.0
    cos_min: float = 0.1
    r_ref: float = 10.0

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.gamma, self.lam, self.kappa, self.c, self.cos_min, self.r_ref)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidParamsError("compensation parameters must be finite")
        if self.lam < 0:
            raise InvalidParamsError("lambda must be >= 0")
        if not self.kappa > 0:
            raise InvalidParamsError("kappa must be > 0")
        if not self.c > 0:
            raise InvalidParamsError("c must be > 0")
        if not 0 < self.cos_min < 1:
            raise InvalidParamsError("cos_min must lie in (0, 1)")
        if not self.r_ref > 0:
            raise InvalidParamsError("r_ref must be > 0")

    KEYS = ("alpha", "beta", "gamma", "lambda", "kappa", "r_d", "d", "D", "S_d", "c", "cos_min", "r_ref")

    def to_dict(self):
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "lambda": self.lam,
            "kappa": self.kappa,
            "r_d": self.eta.r_d,
            "d": self.eta.d,
            "D": self.eta.D,
            "S_d": self.eta.S_d,
            "c": self.c,
            "cos_min": self.cos_min,
            "r_ref": self.r_ref,
        }

    @classmethod
    def from_dict(cls, d):
        unknown = sorted(set(d) - set(cls.KEYS))
        if unknown:
            raise InvalidParamsError(f"unknown compensation key(s): {', '.join(unknown)}")
        base = cls()
        eta = EtaConstants(
            r_d=float(d.get("r_d", base.eta.r_d)),
            d=float(d.get("d", base.eta.d)),
            D=float(d.get("D", base.eta.D)),
            S_d=float(d.get("S_d", base.eta.S_d)),
        )
        return cls(
            alpha=float(d.get("alpha", base.alpha)),
            beta=float(d.get("beta", base.beta)),
            gamma=float(d.get("gamma", base.gamma)),
            lam=float(d.get("lambda", base.lam)),
            kappa=float(d.get("kappa", base.kappa)),
            eta=eta,
            c=float(d.get("c", base.c)),
            cos_min=float(d.get("cos_min", base.cos_min)),
            r_ref=float(d.get("r_ref", base.r_ref)),
        )


def save_params(path, params: CompensationParams):
    with open(path, "w") as f:
        json.dump(params.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def load_params(path) -> CompensationParams:
    with open(path) as f:
        return CompensationParams.from_dict(json.load(f))


def _out(x, scalar):
    return float(x) if scalar else x


def eta(R, k: EtaConstants = EtaConstants()):
    """Near-range factor ``1 - exp(-2 r_d^2 (R+d)^2 / (D^2 S_d^2))``."""
    scalar = np.ndim(R) == 0
    R = np.asarray(R, dtype=np.float64)
    if np.any(R < 0):
        raise CompensationError("eta needs R >= 0")
    x = 2.0 * k.r_d**2 * (R + k.d) ** 2 / (k.D**2 * k.S_d**2)
    return _out(-np.expm1(-x), scalar)


def forward_intensity(R, cos_alpha, rho, I_e, k: EtaConstants = EtaConstants()):
    """Received intensity ``eta(R) * I_e * rho * cos(alpha) / R^2``."""
    scalar = all(np.ndim(v) == 0 for v in (R, cos_alpha, rho))
    R = np.asarray(R, dtype=np.float64)
    if np.any(R <= 0):
        raise CompensationError("forward_intensity needs R > 0")
    return _out(eta(R, k) * I_e * np.asarray(rho) * np.asarray(cos_alpha) / (R * R), scalar)


@dataclass(frozen=True)
class CalibSample:
    intensity_measured: float
    range: float
    cos_alpha: float
    material_id: int = 0

    def __post_init__(self):
        if not self.range > 0:
            raise CompensationError("calibration range must be > 0")
        if not self.cos_alpha > 0:
            raise GrazingAngleError("calibration cos_alpha must be > 0")


class CalibSet(NamedTuple):
    """Struct-of-arrays form of a list of :class:`CalibSample`."""

    intensity: np.ndarray
    range: np.ndarray
    cos_alpha: np.ndarray
    material_id: np.ndarray

    @classmethod
    def from_samples(cls, samples):
        if isinstance(samples, CalibSet):
            return samples
        samples = list(samples)
        return cls(
            np.array([s.intensity_measured for s in samples], dtype=np.float64),
            np.array([s.range for s in samples], dtype=np.float64),
            np.array([s.cos_alpha for s in samples], dtype=np.float64),
            np.array([s.material_id for s in samples], dtype=np.int64),
        )

    def samples(self):
        return [
            CalibSample(float(i), float(r), float(c), int(m))
            for i, r, c, m in zip(self.intensity, self.range, self.cos_alpha, self.material_id)
        ]

    def __len__(self):
        return self.intensity.shape[0]


def correct_closed_form(sample: CalibSample, rho, params: CompensationParams):
    """Emitted-power estimate ``C * I * R^2 / (eta(R) * rho * cos(alpha))``."""
    return correct_closed_form_arrays(sample.intensity_measured, sample.range, sample.cos_alpha, rho, params)


def correct_closed_form_arrays(intensity, R, cos_alpha, rho, params: CompensationParams):
    scalar = all(np.ndim(v) == 0 for v in (intensity, R, cos_alpha, rho))
    cos_alpha = np.asarray(cos_alpha, dtype=np.float64)
    if np.any(cos_alpha <= 0):
        raise GrazingAngleError("cos_alpha must be > 0")
    R = np.asarray(R, dtype=np.float64)
    if np.any(R <= 0):
        raise CompensationError("R must be > 0")
    e = np.asarray(eta(R, params.eta))
    if np.any(e <= 0):
        raise CompensationError("eta(R) vanishes; cannot invert")
    return _out(params.c * np.asarray(intensity) * R * R / (e * np.asarray(rho) * cos_alpha), scalar)


def g_of_R(R, params: CompensationParams):
    """Parameterized range factor; raises if it is not positive at every ``R``."""
    scalar = np.ndim(R) == 0
    R = np.asarray(R, dtype=np.float64)
    if np.any(R <= 0):
        raise CompensationError("g_of_R needs R > 0")
    poly = (params.alpha * R + params.beta) * R + params.gamma
    g = poly * np.exp(-params.lam * R) / np.asarray(eta(R, params.eta))
    if np.any(~(g > 0)):
        bad = R[~(g > 0)] if R.ndim else R
        raise InvalidParamsError(f"g(R) <= 0 at R = {np.ravel(bad)[:3].tolist()} m")
    return _out(g, scalar)


def compensate_values(intensity, R, cos_alpha, params: CompensationParams):
    """``I * g(R) / (cos(alpha) * kappa)`` without clamping."""
    return np.asarray(intensity) * g_of_R(R, params) / (np.asarray(cos_alpha) * params.kappa)


def compensate_image(L: ReflectanceImage, D: DepthImage, normals, params: CompensationParams) -> ReflectanceImage:
    """Apply the correction per pixel, clamp to [0, 1].

    Pixels without depth or normal, or with ``cos(alpha) < cos_min``, are invalid.
    """
    if not (L.shape == D.shape == normals.shape):
        raise CompensationError(f"shape mismatch: reflectance {L.shape}, depth {D.shape}, normals {normals.shape}")
    valid = L.mask & D.mask & normals.mask & (normals.cos_alpha >= params.cos_min)
    out = np.zeros(L.shape)
    if valid.any():
        v = compensate_values(L.values[valid], D.values[valid], normals.cos_alpha[valid], params)
        out[valid] = np.clip(v, 0.0, 1.0)
    return ReflectanceImage(out, valid)


# fitting --------------------------------------------------------------------


@dataclass
class FitReport:
    residual_rms: float
    iterations: int
    rounds: int
    converged: bool
    warning: str = ""
    targets: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def to_dict(self):
        return {
            "residual_rms": self.residual_rms,
            "iterations": self.iterations,
            "rounds": self.rounds,
            "converged": self.converged,
            "warning": self.warning,
            "targets": {str(k): v for k, v in self.targets.items()},
        }


LAMBDA_FLOOR = 1e-10


def _exp(x):
    with np.errstate(over="ignore"):
        return float(np.exp(x))


class _Model:
    """Residual model with the gauge ``g(r_ref) = r_ref^2 / eta(r_ref)``.

    Free vector ``p = (alpha, beta, log lambda, log kappa)``; gamma follows
    from the gauge.
    """

    def __init__(self, data: CalibSet, params: CompensationParams):
        self.R = data.range
        self.A = data.intensity / (np.asarray(eta(data.range, params.eta)) * data.cos_alpha)
        self.rr = params.r_ref

    def gamma(self, p):
        alpha, beta, u = p[0], p[1], p[2]
        lam = _exp(u)
        return self.rr**2 * _exp(lam * self.rr) - alpha * self.rr**2 - beta * self.rr

    def corrected(self, p):
        alpha, beta, u, v = p
        lam, kappa = _exp(u), _exp(v)
        poly = (alpha * self.R + beta) * self.R + self.gamma(p)
        return self.A * poly * np.exp(-lam * self.R) / kappa

    def jacobian(self, p):
        alpha, beta, u, v = p
        lam, kappa = _exp(u), _exp(v)
        R, rr = self.R, self.rr
        e = np.exp(-lam * R)
        poly = (alpha * R + beta) * R + self.gamma(p)
        base = self.A * e / kappa
        c = base * poly
        J = np.empty((R.shape[0], 4))
        J[:, 0] = base * (R * R - rr * rr)
        J[:, 1] = base * (R - rr)
        dgamma = rr**3 * _exp(lam * rr)
        J[:, 2] = lam * base * (dgamma - R * poly)
        J[:, 3] = -c
        return J


def _targets(c, mat, materials, scale_to):
    means = np.array([c[mat == m].mean() for m in materials])
    per_sample = means[np.searchsorted(materials, mat)]
    s = scale_to / per_sample.mean()
    return means * s


def _lm(model, p, t_per_sample, max_iter, grad_tol, scale=1.0, xtol=1e-15):
    # residuals are divided by ``scale`` so grad_tol does not depend on intensity units
    def resid(q):
        return (model.corrected(q) - t_per_sample) / scale

    r = resid(p)
    cost = 0.5 * float(r @ r)
    history = [cost]
    mu = None
    nu = 2.0
    it = 0
    status = "max_iter"
    while it < max_iter:
        J = model.jacobian(p) / scale
        grad = J.T @ r
        if np.linalg.norm(grad) < grad_tol:
            status = "gradient"
            break
        H = J.T @ J
        diag = np.maximum(np.diag(H), 1e-300)
        if mu is None:
            mu = 1e-3
        try:
            step = np.linalg.solve(H + mu * np.diag(diag), -grad)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2
            it += 1
            continue
        it += 1
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(p) + xtol):
            status = "step"
            break
        q = p + step
        with np.errstate(over="ignore", invalid="ignore"):
            rq = resid(q)
        cq = 0.5 * float(rq @ rq) if np.all(np.isfinite(rq)) else math.inf
        pred = -(step @ grad) - 0.5 * step @ (H @ step)
        if cq < cost:
            rho = (cost - cq) / pred if pred > 0 else 1.0
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            p, r, cost = q, rq, cq
            history.append(cost)
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e300:
                status = "stalled"
                break
    return p, r, history, it, status


def _check_spread(data: CalibSet):
    n = len(data)
    if n < 20:
        raise CompensationError(f"need at least 20 calibration samples, got {n}")
    if np.any(data.range <= 0) or np.any(data.cos_alpha <= 0):
        raise CompensationError("calibration samples need R > 0 and cos_alpha > 0")
    n_r = np.unique(np.round(data.range, 9)).size
    if n_r < 5:
        raise RankDeficiencyError(f"calibration ranges span only {n_r} distinct value(s); need >= 5")
    n_a = np.unique(np.round(data.cos_alpha, 9)).size
    if n_a < 3:
        raise RankDeficiencyError(f"calibration angles span only {n_a} distinct value(s); need >= 3")


def _gauge(init: CompensationParams):
    lam = max(init.lam, LAMBDA_FLOOR)
    rr = init.r_ref
    poly_ref = (init.alpha * rr + init.beta) * rr + init.gamma
    if not poly_ref > 0:
        raise InvalidParamsError("initial parameters give g(r_ref) <= 0")
    s = rr * rr * math.exp(lam * rr) / poly_ref
    return np.array([init.alpha * s, init.beta * s, math.log(lam), math.log(init.kappa * s)])


def fit_params(samples, init: CompensationParams | None = None, *, max_iter=200, grad_tol=1e-8, max_rounds=50, target_tol=1e-12):
    """Fit ``alpha, beta, gamma, lambda, kappa`` so each material compensates to a constant.

    Alternates between a damped Gauss-Newton solve with the per-material
    targets held fixed and re-estimating the targets as per-material means
    of the corrected intensity. Targets are rescaled so their sample mean
    matches the mean measured intensity, which pins the overall scale.

    Returns ``(params, FitReport)``.
    """
    init = init or CompensationParams()
    data = CalibSet.from_samples(samples)
    _check_spread(data)
    model = _Model(data, init)
    mat = data.material_id
    materials = np.unique(mat)
    mat_idx = np.searchsorted(materials, mat)
    scale_to = float(data.intensity.mean())

    p = _gauge(init)
    # start kappa where the corrected mean already matches the target scale
    p[3] += math.log(float(model.corrected(p).mean()) / scale_to)
    t = _targets(model.corrected(p), mat, materials, scale_to)
    total_it = 0
    history = []
    status = "max_iter"
    rounds = 0
    for rounds in range(1, max_rounds + 1):
        p, r, hist, it, status = _lm(model, p, t[mat_idx], max_iter, grad_tol, scale_to)
        total_it += it
        history.append(hist)
        t_new = _targets(model.corrected(p), mat, materials, scale_to)
        delta = np.max(np.abs(t_new - t) / np.maximum(np.abs(t), 1e-300))
        t = t_new
        if delta < target_tol:
            break
    r = model.corrected(p) - t[mat_idx]
    converged = status in ("gradient", "step")
    warning = ""
    if not converged:
        warning = f"Gauss-Newton stopped without converging ({status})"
    elif delta >= target_tol:
        converged = False
        warning = f"target re-estimation did not settle after {rounds} rounds"

    alpha, beta, u, v = p
    fitted = replace(init, alpha=float(alpha), beta=float(beta), gamma=float(model.gamma(p)), lam=math.exp(u), kappa=math.exp(v))
    try:
        g_of_R(data.range, fitted)
    except InvalidParamsError as exc:
        converged = False
        warning = (warning + "; " if warning else "") + str(exc)
    report = FitReport(
        residual_rms=float(np.sqrt(np.mean(r * r))),
        iterations=total_it,
        rounds=rounds,
        converged=converged,
        warning=warning,
        targets={int(m): float(x) for m, x in zip(materials, t)},
        history=history,
    )
    return fitted, report


def coefficient_of_variation(x):
    x = np.asarray(x, dtype=np.float64)
    return float(x.std() / x.mean())


def per_material_cov(values, material_id):
    """Coefficient of variation of ``values`` within each material."""
    values = np.asarray(values)
    material_id = np.asarray(material_id)
    return {int(m): coefficient_of_variation(values[material_id == m]) for m in np.unique(material_id)}
