"""Blocked adaptive random-walk Metropolis for the spatiotemporal model.

Latent blocks are parameterized in whitened coordinates: each intrinsic
effect is (its sd) times a structure eigenbasis applied to iid standard
normals, so sum-to-zero constraint sets hold exactly at every iteration.
Hyperparameters move on unconstrained scales (log sds, logit mixing, logit
correlation). Proposal covariances and scales adapt during burn-in only;
retained draws come from the frozen kernel, and chains merge in seed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, logit

from ..errors import InitializationError, NumericalError
from .betabinom import CellData, GradeCountCell, cell_loglik, index_cells
from .graphs import LatentStructure
from .priors import Bym2MixingPrior, PcPriorParams, SdPrior, TruncatedExpUnit

RHAT_THRESHOLD = 1.1


@dataclass(frozen=True)
class SpatialModelParams:
    """One configuration of the latent field (a single draw)."""

    beta: np.ndarray
    phi: np.ndarray
    nu: np.ndarray
    u: np.ndarray
    e: np.ndarray
    s: np.ndarray
    zeta: np.ndarray  # (cohorts, areas)
    sigma_phi: float
    sigma_nu: float
    sigma_u: float
    sigma_zeta: float
    lam: float
    rho: float


@dataclass(frozen=True)
class PosteriorDraws:
    """Merged posterior draws with per-parameter convergence diagnostics."""

    structure: LatentStructure
    beta: np.ndarray  # (D, K+1)
    phi: np.ndarray  # (D, B)
    nu: np.ndarray  # (D, B)
    u: np.ndarray  # (D, n)
    e: np.ndarray  # (D, n)
    s: np.ndarray  # (D, n)
    zeta: np.ndarray  # (D, B, n)
    sigma_phi: np.ndarray
    sigma_nu: np.ndarray
    sigma_u: np.ndarray
    sigma_zeta: np.ndarray
    lam: np.ndarray
    rho: np.ndarray
    seed: int
    n_chains: int
    draws_per_chain: int
    burnin: int
    thin: int
    diagnostics: dict
    stratum: str = "all"

    @property
    def n_draws(self) -> int:
        return len(self.rho)

    def draw(self, i: int) -> SpatialModelParams:
        return SpatialModelParams(
            beta=self.beta[i],
            phi=self.phi[i],
            nu=self.nu[i],
            u=self.u[i],
            e=self.e[i],
            s=self.s[i],
            zeta=self.zeta[i],
            sigma_phi=float(self.sigma_phi[i]),
            sigma_nu=float(self.sigma_nu[i]),
            sigma_u=float(self.sigma_u[i]),
            sigma_zeta=float(self.sigma_zeta[i]),
            lam=float(self.lam[i]),
            rho=float(self.rho[i]),
        )


class _Model:
    """State layout, decoding, and log posterior for one dataset."""

    def __init__(self, data: CellData, structure: LatentStructure, priors: PcPriorParams):
        self.data = data
        self.st = structure
        self.priors = priors
        k, b, n = structure.k_max + 1, structure.n_cohorts, structure.n_areas
        self.m_t = structure.temporal_basis.shape[1]
        self.m_s = structure.spatial_basis.shape[1]
        self.m_z = structure.interaction_basis.shape[1]
        sizes = [k, self.m_t, b, n, self.m_s, self.m_z, 6]
        names = ["beta", "z_phi", "z_nu", "z_e", "z_s", "z_zeta", "hyper"]
        offs = np.concatenate([[0], np.cumsum(sizes)])
        self.slices = {nm: slice(offs[i], offs[i + 1]) for i, nm in enumerate(names)}
        self.dim = int(offs[-1])
        self.k, self.b, self.n = k, b, n
        self.island_mask = np.zeros(n, dtype=bool)
        self.island_mask[list(structure.islands)] = True

        self.sd_prior = SdPrior(priors.u_sigma, priors.alpha_sigma)
        self.mix_prior = Bym2MixingPrior(
            structure.bym2_marginal_eigs, priors.u_mix, priors.alpha_mix
        )
        self.rho_prior = TruncatedExpUnit(priors.u_rho, priors.alpha_rho)

    def unpack_hyper(self, hyper: np.ndarray):
        sigmas = np.exp(hyper[:4])
        lam = float(expit(hyper[4]))
        rho = float(expit(hyper[5]))
        return sigmas, lam, rho

    def decode(self, x: np.ndarray) -> SpatialModelParams:
        s = self.slices
        sigmas, lam, rho = self.unpack_hyper(x[s["hyper"]])
        beta = x[s["beta"]]
        phi = sigmas[0] * (self.st.temporal_basis @ x[s["z_phi"]])
        nu = sigmas[1] * x[s["z_nu"]]
        e = x[s["z_e"]]
        spat = (
            self.st.spatial_basis @ x[s["z_s"]]
            if self.m_s
            else np.zeros(self.n)
        )
        u = sigmas[2] * (np.sqrt(1.0 - lam) * e + np.sqrt(lam) * spat)
        u[self.island_mask] = sigmas[2] * e[self.island_mask]
        zeta_flat = (
            sigmas[3] * (self.st.interaction_basis @ x[s["z_zeta"]])
            if self.m_z
            else np.zeros(self.b * self.n)
        )
        return SpatialModelParams(
            beta=beta,
            phi=phi,
            nu=nu,
            u=u,
            e=e,
            s=spat,
            zeta=zeta_flat.reshape(self.b, self.n),
            sigma_phi=float(sigmas[0]),
            sigma_nu=float(sigmas[1]),
            sigma_u=float(sigmas[2]),
            sigma_zeta=float(sigmas[3]),
            lam=lam,
            rho=rho,
        )

    def cell_hazards(self, p: SpatialModelParams) -> np.ndarray:
        d = self.data
        eta = (
            p.beta[d.grade_idx]
            + p.phi[d.cohort_idx]
            + p.nu[d.cohort_idx]
            + p.u[d.area_idx]
            + p.zeta[d.cohort_idx, d.area_idx]
        )
        # keep hazards strictly interior so the likelihood stays finite
        return expit(np.clip(eta, -35.0, 35.0))

    def log_post(self, x: np.ndarray) -> float:
        s = self.slices
        hyper = x[s["hyper"]]
        if np.any(np.abs(hyper) > 40):
            return -np.inf
        p = self.decode(x)
        lp = cell_loglik(self.data, self.cell_hazards(p), p.rho)
        if not np.isfinite(lp):
            return -np.inf
        lp -= 0.5 * float(np.sum((x[s["beta"]] / self.priors.sd_beta) ** 2))
        for name in ("z_phi", "z_nu", "z_e", "z_s", "z_zeta"):
            lp -= 0.5 * float(np.sum(x[s[name]] ** 2))
        for i, sigma in enumerate(
            (p.sigma_phi, p.sigma_nu, p.sigma_u, p.sigma_zeta)
        ):
            lp += self.sd_prior.logpdf(sigma) + hyper[i]  # log-scale jacobian
        lp += self.mix_prior.logpdf(p.lam) + np.log(p.lam) + np.log1p(-p.lam)
        lp += self.rho_prior.logpdf(p.rho) + np.log(p.rho) + np.log1p(-p.rho)
        return float(lp)

    def initial_state(self) -> np.ndarray:
        x = np.zeros(self.dim)
        d = self.data
        for grade in range(self.k):
            sel = d.grade_idx == grade
            if sel.any() and d.n[sel].sum() > 0:
                h0 = d.y[sel].sum() / d.n[sel].sum()
            else:
                h0 = 0.2
            x[self.slices["beta"].start + grade] = logit(np.clip(h0, 1e-3, 1 - 1e-3))
        x[self.slices["hyper"]] = [
            np.log(0.2),
            np.log(0.2),
            np.log(0.2),
            np.log(0.2),
            logit(0.4),
            logit(0.05),
        ]
        return x


class _AdaptiveBlock:
    """Haario-style adaptive proposal for one coordinate block."""

    def __init__(self, sl: slice, dim: int):
        self.sl = sl
        self.dim = dim
        self.target = 0.44 if dim == 1 else 0.234
        self.log_scale = math.log(0.5 / math.sqrt(dim))
        self.mean = np.zeros(dim)
        self.m2 = np.zeros((dim, dim))
        self.count = 0
        self.chol = np.eye(dim)
        self.frozen = False

    def observe(self, xb: np.ndarray) -> None:
        if self.frozen:
            return
        self.count += 1
        delta = xb - self.mean
        self.mean += delta / self.count
        self.m2 += np.outer(delta, xb - self.mean)
        if self.count >= max(50, 2 * self.dim) and self.count % 25 == 0:
            cov = self.m2 / (self.count - 1) + 1e-9 * np.eye(self.dim)
            try:
                self.chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                pass

    def adapt_scale(self, alpha: float) -> None:
        if self.frozen:
            return
        gain = min(0.25, 2.0 / math.sqrt(max(self.count, 1)))
        self.log_scale += gain * (alpha - self.target)

    def propose(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        prop = x.copy()
        step = math.exp(self.log_scale) * (self.chol @ rng.standard_normal(self.dim))
        prop[self.sl] = prop[self.sl] + step
        return prop


def _run_chain(model: _Model, total_iter: int, burnin: int, thin: int,
               keep: int, rng: np.random.Generator) -> np.ndarray:
    x = model.initial_state()
    lp = model.log_post(x)
    if not np.isfinite(lp):
        raise InitializationError("posterior density not finite at initial state")

    blocks = []
    for name in ("beta", "z_phi", "z_nu", "z_e", "z_s", "z_zeta", "hyper"):
        sl = model.slices[name]
        if sl.stop > sl.start:
            blocks.append(_AdaptiveBlock(sl, sl.stop - sl.start))

    out = np.empty((keep, model.dim))
    kept = 0
    for it in range(total_iter):
        if it == burnin:
            for blk in blocks:
                blk.frozen = True
        for blk in blocks:
            prop = blk.propose(x, rng)
            lp_prop = model.log_post(prop)
            log_alpha = lp_prop - lp
            alpha = 1.0 if log_alpha >= 0 else math.exp(max(log_alpha, -700.0))
            if rng.uniform() < alpha:
                x, lp = prop, lp_prop
            blk.adapt_scale(alpha)
            blk.observe(x[blk.sl])
        if it >= burnin and (it - burnin) % thin == 0 and kept < keep:
            out[kept] = x
            kept += 1
    return out[:kept]


def split_rhat(chains: np.ndarray) -> float:
    """Split R-hat over a (chains, draws) matrix."""
    c, d = chains.shape
    half = d // 2
    if half < 2:
        return np.nan
    seqs = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    within = seqs.var(axis=1, ddof=1).mean()
    between = half * seqs.mean(axis=1).var(ddof=1)
    if within <= 0:
        return 1.0
    var_plus = (half - 1) / half * within + between / half
    return float(np.sqrt(var_plus / within))


def effective_sample_size(chains: np.ndarray) -> float:
    """Autocorrelation-based ESS (Geyer initial positive sequence), per chain
    estimates combined by summation."""
    c, d = chains.shape
    if d < 4:
        return float(c * d)
    ess_total = 0.0
    for seq in chains:
        x = seq - seq.mean()
        var = x.var()
        if var <= 0:
            ess_total += d
            continue
        nfft = 1 << (2 * d - 1).bit_length()
        f = np.fft.rfft(x, nfft)
        acov = np.fft.irfft(f * np.conjugate(f), nfft)[:d].real / d
        rho = acov / acov[0]
        # sum consecutive pairs until the pair sum goes negative
        tau = 1.0
        t = 1
        while t + 1 < d:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            tau += 2.0 * pair
            t += 2
        ess_total += d / max(tau, 1.0)
    return float(ess_total)


def fit_mcmc(
    cells: Sequence[GradeCountCell],
    structure: LatentStructure,
    config: dict | None = None,
) -> PosteriorDraws:
    """Sample the posterior of the spatiotemporal model.

    ``config`` keys: draws (retained per chain, >= 1), burnin, thin, chains,
    seed, pc_prior_params (dict for PcPriorParams), stratum (metadata tag).
    Deterministic given the seed; chains run and merge in seed order. R-hat
    above 1.1 is flagged in the diagnostics, never fatal.
    """
    cfg = dict(config or {})
    draws = int(cfg.get("draws", 5000))
    burnin = int(cfg.get("burnin", 5000))
    thin = int(cfg.get("thin", 1))
    chains = int(cfg.get("chains", 4))
    seed = int(cfg.get("seed", 0))
    stratum = str(cfg.get("stratum", "all"))
    if draws < 1:
        raise NumericalError(f"config draws must be >= 1, got {draws}")
    if thin < 1 or burnin < 0 or chains < 1:
        raise NumericalError("invalid chain configuration")
    priors = PcPriorParams.from_dict(cfg.get("pc_prior_params"))

    data = index_cells(cells, structure)
    model = _Model(data, structure, priors)
    total_iter = burnin + draws * thin

    seeds = np.random.SeedSequence(seed).spawn(chains)
    raw = []
    for chain_seq in seeds:
        rng = np.random.default_rng(chain_seq)
        raw.append(_run_chain(model, total_iter, burnin, thin, draws, rng))
    raw = np.stack(raw)  # (chains, draws, dim)

    # decode all draws at once
    flat = raw.reshape(-1, model.dim)
    s = model.slices
    hyper = flat[:, s["hyper"]]
    sigma = np.exp(hyper[:, :4])
    lam = expit(hyper[:, 4])
    rho = expit(hyper[:, 5])
    beta = flat[:, s["beta"]]
    phi = sigma[:, [0]] * (flat[:, s["z_phi"]] @ structure.temporal_basis.T)
    nu = sigma[:, [1]] * flat[:, s["z_nu"]]
    e = flat[:, s["z_e"]]
    spat = (
        flat[:, s["z_s"]] @ structure.spatial_basis.T
        if model.m_s
        else np.zeros((len(flat), model.n))
    )
    u = sigma[:, [2]] * (
        np.sqrt(1.0 - lam)[:, None] * e + np.sqrt(lam)[:, None] * spat
    )
    if model.island_mask.any():
        u[:, model.island_mask] = (sigma[:, [2]] * e)[:, model.island_mask]
    zeta_flat = (
        sigma[:, [3]] * (flat[:, s["z_zeta"]] @ structure.interaction_basis.T)
        if model.m_z
        else np.zeros((len(flat), model.b * model.n))
    )
    zeta = zeta_flat.reshape(len(flat), model.b, model.n)

    # diagnostics on hyperparameters and grade intercepts
    diagnostics = {"rhat": {}, "ess": {}, "flagged": []}
    tracked = {
        "sigma_phi": np.log(sigma[:, 0]),
        "sigma_nu": np.log(sigma[:, 1]),
        "sigma_u": np.log(sigma[:, 2]),
        "sigma_zeta": np.log(sigma[:, 3]),
        "lambda": hyper[:, 4],
        "rho": hyper[:, 5],
    }
    for grade in range(model.k):
        tracked[f"beta_{grade}"] = beta[:, grade]
    for name, series in tracked.items():
        mat = series.reshape(chains, draws)
        rhat = split_rhat(mat)
        diagnostics["rhat"][name] = rhat
        diagnostics["ess"][name] = effective_sample_size(mat)
        if np.isfinite(rhat) and rhat > RHAT_THRESHOLD:
            diagnostics["flagged"].append(name)

    return PosteriorDraws(
        structure=structure,
        beta=beta,
        phi=phi,
        nu=nu,
        u=u,
        e=e,
        s=spat,
        zeta=zeta,
        sigma_phi=sigma[:, 0],
        sigma_nu=sigma[:, 1],
        sigma_u=sigma[:, 2],
        sigma_zeta=sigma[:, 3],
        lam=lam,
        rho=rho,
        seed=seed,
        n_chains=chains,
        draws_per_chain=draws,
        burnin=burnin,
        thin=thin,
        diagnostics=diagnostics,
        stratum=stratum,
    )


def sample_prior_params(
    structure: LatentStructure,
    priors: PcPriorParams,
    rng: np.random.Generator,
) -> SpatialModelParams:
    """Draw one latent-field configuration from the model's own priors."""
    sd_prior = SdPrior(priors.u_sigma, priors.alpha_sigma)
    mix_prior = Bym2MixingPrior(
        structure.bym2_marginal_eigs, priors.u_mix, priors.alpha_mix
    )
    rho_prior = TruncatedExpUnit(priors.u_rho, priors.alpha_rho)
    b, n = len(structure.cohorts), structure.graph.n
    sigma_phi = sd_prior.sample(rng)
    sigma_nu = sd_prior.sample(rng)
    sigma_u = sd_prior.sample(rng)
    sigma_zeta = sd_prior.sample(rng)
    lam = mix_prior.sample(rng)
    rho = rho_prior.sample(rng)
    beta = priors.sd_beta * rng.standard_normal(structure.k_max + 1)
    phi = sigma_phi * (structure.temporal_basis @ rng.standard_normal(b - 1))
    nu = sigma_nu * rng.standard_normal(b)
    e = rng.standard_normal(n)
    m_s = structure.spatial_basis.shape[1]
    s = structure.spatial_basis @ rng.standard_normal(m_s) if m_s else np.zeros(n)
    u = sigma_u * (np.sqrt(1 - lam) * e + np.sqrt(lam) * s)
    islands = np.zeros(n, dtype=bool)
    islands[list(structure.islands)] = True
    u[islands] = sigma_u * e[islands]
    m_z = structure.interaction_basis.shape[1]
    zeta_flat = (
        sigma_zeta * (structure.interaction_basis @ rng.standard_normal(m_z))
        if m_z
        else np.zeros(b * n)
    )
    return SpatialModelParams(
        beta=beta,
        phi=phi,
        nu=nu,
        u=u,
        e=e,
        s=s,
        zeta=zeta_flat.reshape(b, n),
        sigma_phi=sigma_phi,
        sigma_nu=sigma_nu,
        sigma_u=sigma_u,
        sigma_zeta=sigma_zeta,
        lam=lam,
        rho=rho,
    )


def domain_hazards(params: SpatialModelParams, structure: LatentStructure,
                   cohort: int, area_id: str) -> np.ndarray:
    """Hazards over grades 0..K for one (cohort, area) under one draw."""
    b = structure.cohorts.index(cohort)
    i = structure.graph.index_of(area_id)
    eta = params.beta + params.phi[b] + params.nu[b] + params.u[i] + params.zeta[b, i]
    return expit(eta)


def simulate_from_model(
    structure: LatentStructure,
    params: SpatialModelParams,
    rng: np.random.Generator,
    clusters_per_area: int = 4,
    persons_per_cluster_cohort: int = 6,
) -> list[GradeCountCell]:
    """Generate grade-count cells from the model's own likelihood.

    Persons progress sequentially: the cell event count at each grade is a
    beta-binomial draw (beta-mixed binomial) on the survivors, matching the
    conditional independence of cells given the latent field.
    """
    cells = []
    for ai, area in enumerate(structure.graph.areas):
        for c in range(clusters_per_area):
            cluster_id = f"{area}_cl{c}"
            for bi, cohort in enumerate(structure.cohorts):
                hazards = domain_hazards(params, structure, cohort, area)
                at_risk = persons_per_cluster_cohort
                for grade in range(structure.k_max + 1):
                    if at_risk == 0:
                        break
                    h = float(hazards[grade])
                    if params.rho > 0:
                        a = h * (1 - params.rho) / params.rho
                        b_par = (1 - h) * (1 - params.rho) / params.rho
                        q = rng.beta(a, b_par) if 0 < h < 1 else h
                    else:
                        q = h
                    y = int(rng.binomial(at_risk, q))
                    cells.append(
                        GradeCountCell(
                            cohort=cohort,
                            cluster_id=cluster_id,
                            area_id=area,
                            urban=False,
                            grade=grade,
                            n=at_risk,
                            y=y,
                        )
                    )
                    at_risk -= y
    return cells
