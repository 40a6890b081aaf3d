"""Coefficient-space dynamics whose invariant law is the Gibbs measure.

The K-mode chain evolves c with drift -b_k c_k - <gamma (H_F o phi),
phi_k>_{L^2(lambda)} and isotropic sqrt(2) noise, Metropolis-corrected
against exp(-sum b_k c_k^2/2 - W_F) restricted to the certified set
D^(n); proposals leaving the set are auto-rejected. Because the b_k grow
geometrically the system is stiff: the "mala" scheme (plain Euler
proposal) needs dt below 1/max(b_k) and is used for small-step
quadratic-variation diagnostics, while "mala-ou" integrates the linear
part exactly (exponential proposal, stable at any dt) and is used for
mixing runs. Both are exactly invariant thanks to the Metropolis filter.
The noiseless, OU-free version of the drift is the projected
deterministic gradient flow. All dynamics are d = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .basis import GaussWeights, VectorFieldBasis
from .diffeo import certify_Dn_batch
from .energy import S_FLOOR, EnergyIntegrand
from .gradient import GammaWeight, identity_gamma
from .measures import GaussianSpec, sample_coefficients
from .reference import make_grid

DYNAMICS_NODES = 512
STEP_SANITY = 0.1
SCHEMES = ("mala", "mala-ou", "euler-reflect")


class ConfigurationError(ValueError):
    pass


@dataclass
class Observable:
    """Linear cylinder observable u(mu) = mu(h); h, dh act elementwise."""

    h: Callable[[np.ndarray], np.ndarray]
    dh: Callable[[np.ndarray], np.ndarray]
    name: str


def default_observables() -> list[Observable]:
    return [
        Observable(np.tanh, lambda y: 1.0 / np.cosh(y) ** 2, "tanh"),
        Observable(lambda y: np.exp(-0.5 * y**2),
                   lambda y: -y * np.exp(-0.5 * y**2), "gausslet"),
        Observable(np.cos, lambda y: -np.sin(y), "cos"),
    ]


@dataclass
class SGFConfig:
    basis: VectorFieldBasis
    weights: GaussWeights
    F: EnergyIntegrand
    gamma: GammaWeight = field(default_factory=identity_gamma)
    n: int | None = 4          # None disables conditioning (F = 0 reductions)
    dt: float = 1e-3
    n_steps: int = 10**5
    ensemble: int = 16
    seed: int = 0
    scheme: str = "mala-ou"
    record_stride: int = 100
    observables: Sequence[Observable] = field(default_factory=default_observables)
    nodes: int = DYNAMICS_NODES

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigurationError(
                f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")


@dataclass
class SGFResult:
    config: SGFConfig
    times: np.ndarray                 # recorded times (R,)
    states: np.ndarray                # (M, R, K)
    obs_series: np.ndarray            # (M, R, n_obs)
    acceptance_rate: float
    rejections: int
    sum_du_sq: np.ndarray             # (M, n_obs): sum of (u_{i+1} - u_i)^2
    sum_gamma_dt: np.ndarray          # (M, n_obs): sum of Gamma_K(u,u) dt
    obs_mean: np.ndarray              # (M, n_obs) full-chain time averages
    final_coeffs: np.ndarray          # (M, K)

    def all_states_certified(self) -> bool:
        if self.config.n is None:
            return True
        flat = self.states.reshape(-1, self.states.shape[-1])
        return bool(np.all(certify_Dn_batch(flat, self.config.basis,
                                            self.config.n)))


class _Engine:
    """Vectorized ensemble evaluation on a shared quadrature grid.

    Methods take coefficient blocks C of shape (M, K) and work on (M, N)
    node arrays; basis profile matrices are cached once.
    """

    def __init__(self, config: SGFConfig):
        basis = config.basis
        if basis.dim != 1:
            raise ConfigurationError("dynamics implemented for d = 1")
        self.config = config
        ref = basis.ref
        grid = make_grid(ref.grid.window, config.nodes)
        self.x = grid.nodes[:, 0]
        self.rho = ref.density(grid.nodes)
        self.drho = ref.grad_density(grid.nodes)[:, 0]
        self.wq = grid.weights
        self.wrho = self.wq * self.rho
        self.B0 = basis.value_matrix_1d(self.x, 0)
        self.B1 = basis.value_matrix_1d(self.x, 1)
        self.B2 = basis.value_matrix_1d(self.x, 2)
        self.b = config.weights.b
        self.K = basis.K_max

    def push(self, C: np.ndarray) -> dict:
        C = np.atleast_2d(C)
        Phi = self.x[None, :] + C @ self.B0
        dPhi = 1.0 + C @ self.B1
        return {"C": C, "Phi": Phi, "dPhi": dPhi, "s": self.rho / dPhi}

    def energy(self, p: dict) -> np.ndarray:
        """W_F by change of variables, per ensemble member."""
        F = self.config.F
        vals = F.F(p["Phi"].reshape(-1, 1), p["s"].ravel()).reshape(p["s"].shape)
        return (vals * p["dPhi"]) @ self.wq

    def log_target(self, p: dict) -> np.ndarray:
        quad = 0.5 * np.sum(self.b * p["C"] ** 2, axis=1)
        return -quad - self.energy(p)

    def pull(self, p: dict) -> np.ndarray:
        """<gamma (H_F o phi), phi_k>_{L^2(lambda)} per mode, (M, K)."""
        F = self.config.F
        C, Phi, dPhi, s = p["C"], p["Phi"], p["dPhi"], p["s"]
        ddPhi = C @ self.B2
        grad_s = self.drho / dPhi**2 - self.rho * ddPhi / dPhi**3
        flat = Phi.reshape(-1, 1)
        H = (np.asarray(F.grad1_d2F(flat, s.ravel()), dtype=float)[:, 0]
             .reshape(s.shape) + F.d2d2F(flat, s.ravel()).reshape(s.shape) * grad_s)
        H[s < S_FLOOR] = 0.0
        gam = self.config.gamma(flat, s.ravel()).reshape(s.shape)
        return (H * gam * self.wrho) @ self.B0.T

    def drift(self, C: np.ndarray) -> np.ndarray:
        p = self.push(np.atleast_2d(C))
        return -self.b * p["C"] - self.pull(p)

    def observe(self, p: dict) -> tuple[np.ndarray, np.ndarray]:
        """(values, square field) of the registered observables, (M, n_obs).

        The square field is the one of the truncated chain itself:
        Gamma_K(u,u)(c) = sum_k <(h' o phi), phi_k>^2 = |grad_c u|^2,
        matching the isotropic sqrt(2) noise in coefficient space.
        """
        obs = self.config.observables
        vals = np.empty((p["Phi"].shape[0], len(obs)))
        sq = np.empty_like(vals)
        for i, ob in enumerate(obs):
            hv = ob.h(p["Phi"])
            vals[:, i] = hv @ self.wrho
            proj = (ob.dh(p["Phi"]) * self.wrho) @ self.B0.T      # (M, K)
            sq[:, i] = np.sum(proj**2, axis=1)
        return vals, sq

    def gibbs_square_field(self, coeffs: np.ndarray,
                           logw: np.ndarray) -> dict:
        """Importance-sampling Gibbs means of Gamma_K(u,u) per observable."""
        _, sq = self.observe(self.push(coeffs))
        w = np.exp(logw - logw.max())
        w /= w.sum()
        return {ob.name: float(np.sum(w * sq[:, i]))
                for i, ob in enumerate(self.config.observables)}


def stationary_initial_ensemble(config: SGFConfig,
                                rng: np.random.Generator,
                                pool: int = 4096) -> np.ndarray:
    """Importance resampling from the Gibbs law over the conditioned Gaussian."""
    if config.n is None:
        spec = GaussianSpec(config.basis, config.weights, conditioning="none")
    else:
        spec = GaussianSpec(config.basis, config.weights,
                            conditioning="Dn", n=config.n)
    coeffs = sample_coefficients(spec, rng, pool)
    eng = _Engine(config)
    logw = -eng.energy(eng.push(coeffs))
    w = np.exp(logw - logw.max())
    idx = rng.choice(pool, size=config.ensemble, p=w / w.sum())
    return coeffs[idx]


def _proposal_params(config: SGFConfig, b: np.ndarray):
    """Per-mode (decay vector applied to c, pull factor, noise variance)."""
    dt = config.dt
    if config.scheme in ("mala", "euler-reflect"):
        decay = 1.0 - dt * b
        pull_fac = np.full_like(b, dt)
        var = np.full_like(b, 2.0 * dt)
    else:
        e = np.exp(-b * dt)
        decay = e
        pull_fac = (1.0 - e) / b
        var = (1.0 - e**2) / b
    return decay, pull_fac, var


def run_sgf(config: SGFConfig, initial: np.ndarray | None = None) -> SGFResult:
    """Ensemble chain to the horizon; per-member RNG streams keyed by
    (seed, member) make the result independent of scheduling."""
    eng = _Engine(config)
    basis, n, dt = config.basis, config.n, config.dt
    M, K = config.ensemble, eng.K
    rngs = [np.random.default_rng([config.seed, m]) for m in range(M)]
    if initial is None:
        init_rng = np.random.default_rng([config.seed, 2**32 - 1])
        initial = stationary_initial_ensemble(config, init_rng)
    C = np.array(initial, dtype=float).reshape(M, K)

    def certified(block: np.ndarray) -> np.ndarray:
        if n is None:
            return np.ones(block.shape[0], dtype=bool)
        return certify_Dn_batch(block, basis, n)

    if not np.all(certified(C)):
        raise ConfigurationError("initial ensemble not certified for D^(n)")

    p = eng.push(C)
    pull = eng.pull(p)
    if config.scheme in ("mala", "euler-reflect"):
        drift0 = -eng.b * C - pull
        sanity = dt * float(np.max(np.abs(drift0)))
    else:
        # exponential scheme is exact on the linear part; only the
        # nonlinear shift is explicit
        sanity = float(np.max(np.abs(pull * (1.0 - np.exp(-eng.b * dt)) / eng.b)))
    if sanity >= STEP_SANITY:
        raise ConfigurationError(
            f"step sanity violated: explicit increment {sanity:.3g} >= "
            f"{STEP_SANITY}; reduce dt or switch scheme")

    logpi = eng.log_target(p)
    obs_vals, gam_sq = eng.observe(p)
    decay, pull_fac, var = _proposal_params(config, eng.b)
    std = np.sqrt(var)
    metropolis = config.scheme != "euler-reflect"

    n_rec = config.n_steps // config.record_stride + 1
    n_obs = len(config.observables)
    states = np.empty((M, n_rec, K))
    obs_series = np.empty((M, n_rec, n_obs))
    states[:, 0] = C
    obs_series[:, 0] = obs_vals
    sum_du_sq = np.zeros((M, n_obs))
    sum_gamma_dt = np.zeros((M, n_obs))
    obs_sum = np.zeros((M, n_obs))
    accepted = 0
    rec = 1

    for step in range(1, config.n_steps + 1):
        sum_gamma_dt += gam_sq * dt          # left-endpoint integral of Gamma
        noise = np.stack([rng.standard_normal(K) for rng in rngs])
        uni = np.array([rng.random() for rng in rngs])
        mean_fwd = decay * C - pull_fac * pull
        prop = mean_fwd + std * noise
        ok = certified(prop)
        acc = np.zeros(M, dtype=bool)
        if np.any(ok):
            pp = eng.push(prop[ok])
            lp = eng.log_target(pp)
            pull_p = eng.pull(pp)
            if metropolis:
                mean_bwd = decay * prop[ok] - pull_fac * pull_p
                fwd = -np.sum((prop[ok] - mean_fwd[ok]) ** 2 / (2 * var), axis=1)
                bwd = -np.sum((C[ok] - mean_bwd) ** 2 / (2 * var), axis=1)
                log_alpha = lp - logpi[ok] + bwd - fwd
                acc[ok] = np.log(uni[ok]) < log_alpha
            else:
                acc[ok] = True
            sel = acc[ok]                    # accepted rows within the ok block
            if np.any(sel):
                C[acc] = prop[acc]
                logpi[acc] = lp[sel]
                pull[acc] = pull_p[sel]
                sub = {k: v[sel] for k, v in pp.items()}
                v_new, g_new = eng.observe(sub)
                sum_du_sq[acc] += (v_new - obs_vals[acc]) ** 2
                obs_vals[acc] = v_new
                gam_sq[acc] = g_new
        accepted += int(np.sum(acc))
        obs_sum += obs_vals
        if step % config.record_stride == 0:
            states[:, rec] = C
            obs_series[:, rec] = obs_vals
            rec += 1

    times = np.arange(n_rec) * config.record_stride * dt
    return SGFResult(
        config=config, times=times, states=states, obs_series=obs_series,
        acceptance_rate=accepted / (M * config.n_steps),
        rejections=M * config.n_steps - accepted,
        sum_du_sq=sum_du_sq, sum_gamma_dt=sum_gamma_dt,
        obs_mean=obs_sum / config.n_steps, final_coeffs=C.copy())


# -- deterministic flow -------------------------------------------------------

@dataclass
class FlowResult:
    times: np.ndarray
    states: np.ndarray                # (R, K)
    energies: np.ndarray              # W_F along the flow
    observables: dict                 # name -> series
    completed: bool
    message: str = ""


def run_deterministic_flow(config: SGFConfig, initial: np.ndarray,
                           T: float, n_record: int = 101,
                           rtol: float = 1e-8, atol: float = 1e-10,
                           min_slope: float = 0.05) -> FlowResult:
    """dc_k/dt = -<gamma (H_F o phi), phi_k>: the basis-projected gradient
    flow of W_F. Integrated adaptively; stops early when the map loses
    grid-measured monotonicity margin (the triangle-inequality contraction
    certificate is far too conservative along expanding flows, so the
    guard here is min phi' > min_slope measured on the quadrature grid)."""
    eng = _Engine(config)
    c0 = np.asarray(initial, dtype=float)
    t_eval = np.linspace(0.0, T, n_record)

    def rhs(t, c):
        return -eng.pull(eng.push(c[None, :]))[0]

    def monotone_exit(t, c):
        dPhi = 1.0 + c @ eng.B1
        return float(np.min(dPhi)) - min_slope
    monotone_exit.terminal = True

    sol = solve_ivp(rhs, (0.0, T), c0, t_eval=t_eval, rtol=rtol, atol=atol,
                    events=monotone_exit, dense_output=False)
    states = sol.y.T
    times = sol.t
    p = eng.push(states)
    energies = eng.energy(p)
    obs = {ob.name: ob.h(p["Phi"]) @ eng.wrho for ob in config.observables}
    completed = sol.status == 0
    msg = "" if completed else ("monotonicity margin lost mid-flow"
                                if sol.status == 1 else sol.message)
    return FlowResult(times=times, states=states, energies=energies,
                      observables=obs, completed=completed, message=msg)


def lyapunov_violation(result: FlowResult) -> float:
    """Largest per-step increase of W_F along the flow (expected <= 1e-8)."""
    return float(np.max(np.diff(result.energies), initial=-np.inf))


# -- martingale / stationarity diagnostics -----------------------------------

@dataclass
class DiagnosticsReport:
    stationarity: dict                # name -> (max |bin - overall| / se, pass)
    energy_ratio: dict                # name -> (ratio, ci_lo, ci_hi)
    qv_ratio: dict                    # name -> (ratio, ci_lo, ci_hi, contains_one)
    underpowered: list

    def passed(self, lo: float = 0.9, hi: float = 1.1) -> bool:
        stat_ok = all(v[1] for v in self.stationarity.values())
        en_ok = all(lo <= v[0] <= hi for v in self.energy_ratio.values())
        qv_ok = all(v[3] for v in self.qv_ratio.values())
        return stat_ok and en_ok and qv_ok and not self.underpowered


def martingale_diagnostics(result: SGFResult,
                           gibbs_gamma: dict | None = None,
                           n_bins: int = 8) -> DiagnosticsReport:
    """Empirical checks of the three trajectory signatures.

    gibbs_gamma optionally supplies independent (importance-sampling)
    estimates of the Gibbs mean of Gamma_K(u,u) per observable name;
    otherwise the chain's own time average is the reference. The pathwise
    quadratic variation of u is compared with 2 int Gamma_K(u,u) dt: the
    energy measure of u is twice the square field in this normalization.
    Energy/QV ratios are meaningful only on chains with dt * max b_k well
    below 1 (scheme "mala" at small steps); on coarser exponential-scheme
    chains the fast modes saturate and the ratio dips by construction.
    """
    cfg = result.config
    names = [ob.name for ob in cfg.observables]
    M = cfg.ensemble
    underpowered = []
    if M < 4:
        underpowered.append("ensemble too small for member-spread errors")

    stationarity = {}
    series = result.obs_series                      # (M, R, n_obs)
    R = series.shape[1]
    edges = np.linspace(0, R, n_bins + 1, dtype=int)
    for i, name in enumerate(names):
        member_bin = np.stack([series[:, a:b, i].mean(axis=1)
                               for a, b in zip(edges[:-1], edges[1:])])  # (bins, M)
        bin_mean = member_bin.mean(axis=1)
        bin_se = member_bin.std(axis=1, ddof=1) / math.sqrt(M)
        overall = series[:, :, i].mean()
        dev = np.abs(bin_mean - overall) / np.where(bin_se > 0, bin_se, np.inf)
        stationarity[name] = (float(dev.max()), bool(np.all(dev <= 3.0)))

    horizon = cfg.n_steps * cfg.dt
    energy_ratio = {}
    qv_ratio = {}
    for i, name in enumerate(names):
        # (ii) E[(du)^2] / (2 dt) against the Gibbs mean of Gamma_K(u,u)
        per_member = result.sum_du_sq[:, i] / (2 * cfg.dt * cfg.n_steps)
        if gibbs_gamma is not None and name in gibbs_gamma:
            ref_val = gibbs_gamma[name]
        else:
            ref_val = float(np.mean(result.sum_gamma_dt[:, i] / horizon))
        ratios = per_member / ref_val
        mean_r = float(np.mean(ratios))
        se_r = float(np.std(ratios, ddof=1) / math.sqrt(M))
        energy_ratio[name] = (mean_r, mean_r - 3 * se_r, mean_r + 3 * se_r)
        # (iii) pathwise QV against 2 int Gamma_K dt
        qv = result.sum_du_sq[:, i] / (2 * result.sum_gamma_dt[:, i])
        mq = float(np.mean(qv))
        qv_se = float(np.std(qv, ddof=1) / math.sqrt(M))
        lo, hi = mq - 3 * qv_se, mq + 3 * qv_se
        qv_ratio[name] = (mq, lo, hi, bool(lo <= 1.0 <= hi))
        if qv_se > 0.05:
            underpowered.append(f"{name}: QV standard error {qv_se:.3g} > 0.05")

    return DiagnosticsReport(stationarity=stationarity,
                             energy_ratio=energy_ratio, qv_ratio=qv_ratio,
                             underpowered=underpowered)


def stationary_coefficient_stats(result: SGFResult,
                                 burn_frac: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """(variance estimate, standard error) per coefficient from recorded
    states, member-spread errors."""
    R = result.states.shape[1]
    tail = result.states[:, int(burn_frac * R):, :]
    member_var = tail.var(axis=1, ddof=1)           # (M, K)
    var = member_var.mean(axis=0)
    se = member_var.std(axis=0, ddof=1) / math.sqrt(member_var.shape[0])
    return var, se
