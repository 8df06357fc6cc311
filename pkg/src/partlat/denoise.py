"""Joint denoising of part latents and local semantic tokens.

One denoising step runs two synchronization blocks over the noised
state -- within-part alignment of the geometry/appearance streams under
local semantic guidance, then cross-part message passing, global-token
guidance and a bottom-up planner update -- followed by a deterministic
DDIM update of every diffused stream. Global tokens are never noised:
they condition every step and evolve only through the planner residual.

Identity binding: each part's identity vector is added to its streams
wherever they enter an attention call (query or context). The streams
themselves accumulate only the attention residuals, so a block with all
fusion coefficients at zero leaves the state unchanged.

Denoisers are pluggable. The analytic-Gaussian denoiser is the optimal
noise predictor for an elementwise Gaussian target and makes sampling
exactly checkable; the reference MLP is a small trainable token-wise
network with hand-derived gradients.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import newton_krylov as sp_newton_krylov

from .errors import DimensionError, InputError, NumericError
from .latent_math import AttentionParams, attention, pool_part
from .parts import IdentityTable, ObjectLatents, PartLatent
from .seeding import substream
from .semantics import Embedder, GlobalTokens, LocalTokens, SemanticLatents, encode_global

DEFAULT_STEPS = 50
ALPHA_CLIP = 1e-4

# ---------------------------------------------------------------------------
# Noise schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule on the grid t = 0..T."""

    T: int
    alpha: np.ndarray
    sigma: np.ndarray
    kind: str

    def __post_init__(self):
        if self.alpha.shape != (self.T + 1,) or self.sigma.shape != (self.T + 1,):
            raise DimensionError("schedule arrays must have length T+1")


def make_schedule(T: int, kind: str = "cosine-vp") -> NoiseSchedule:
    """Build a variance-preserving schedule.

    cosine-vp: alpha_t = cos(pi/2 * t/T); linear-vp: alpha_t^2 = 1 - t/T
    (symmetric, so alpha = sigma = 1/sqrt(2) at t = T/2). Both are clipped
    to [ALPHA_CLIP, 1 - ALPHA_CLIP] and sigma is set from the VP identity.
    """
    if T < 2:
        raise InputError(f"schedule needs T >= 2, got {T}")
    t = np.arange(T + 1, dtype=np.float64)
    if kind == "cosine-vp":
        alpha = np.cos(0.5 * np.pi * t / T)
    elif kind == "linear-vp":
        alpha = np.sqrt(np.clip(1.0 - t / T, 0.0, 1.0))
    else:
        raise InputError(f"unknown schedule kind {kind!r}")
    alpha = np.clip(alpha, ALPHA_CLIP, 1.0 - ALPHA_CLIP)
    sigma = np.sqrt(1.0 - alpha**2)
    return NoiseSchedule(T=T, alpha=alpha, sigma=sigma, kind=kind)


def snr_weight(sched: NoiseSchedule, t: int) -> tuple[float, float]:
    """(SNR(t), w(t)) with SNR = alpha^2/sigma^2 and w = SNR/(1+SNR).

    Under the VP identity w reduces to alpha_t^2 exactly, which is what we
    return; the ratio form would lose digits near the endpoints.
    """
    if not (0 <= t <= sched.T):
        raise InputError(f"t={t} outside schedule range [0, {sched.T}]")
    a2 = float(sched.alpha[t]) ** 2
    s2 = float(sched.sigma[t]) ** 2
    snr = a2 / s2 if s2 > 0.0 else np.inf
    return snr, a2


def forward_noise(clean: np.ndarray, sched: NoiseSchedule, t: int, noise: np.ndarray) -> np.ndarray:
    """Mix ``clean`` toward noise level t: alpha_t * clean + sigma_t * noise."""
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise DimensionError(f"clean shape {clean.shape} != noise shape {noise.shape}")
    if not (0 <= t <= sched.T):
        raise InputError(f"t={t} outside schedule range [0, {sched.T}]")
    return sched.alpha[t] * clean + sched.sigma[t] * noise


# ---------------------------------------------------------------------------
# Synchronization coefficients (scalars + one attention site each)
# ---------------------------------------------------------------------------

SYNC_SITES = (
    "intra_geo_app",
    "intra_app_geo",
    "intra_geo_loc",
    "intra_app_loc",
    "inter_geo_msg",
    "inter_app_msg",
    "inter_geo_glb",
    "inter_app_glb",
    "planner",
)


@dataclass
class SyncCoefficients:
    alpha_3d: float = 1.0
    alpha_2d: float = 1.0
    lambda_3d: float = 1.0
    lambda_2d: float = 1.0
    beta_3d: float = 1.0
    beta_2d: float = 1.0
    eta: float = 1.0
    attn: dict[str, AttentionParams] = field(default_factory=dict)
    pool_proj: np.ndarray | None = None

    def __post_init__(self):
        missing = [s for s in SYNC_SITES if s not in self.attn]
        if missing:
            raise InputError(f"missing attention params for sites {missing}")
        d = self.attn[SYNC_SITES[0]].width
        for s in SYNC_SITES:
            if self.attn[s].width != d:
                raise DimensionError("all attention sites must share one width")
        if self.pool_proj is None:
            self.pool_proj = np.eye(d)
        self.pool_proj = np.asarray(self.pool_proj, dtype=np.float64)
        if self.pool_proj.shape != (d, d):
            raise DimensionError(f"pool_proj must be {d}x{d}")

    @property
    def width(self) -> int:
        return self.attn[SYNC_SITES[0]].width

    @classmethod
    def identity(cls, d: int, **scalars) -> "SyncCoefficients":
        return cls(attn={s: AttentionParams.identity(d) for s in SYNC_SITES}, **scalars)

    @classmethod
    def disabled(cls, d: int) -> "SyncCoefficients":
        """Zero value projections everywhere: synchronization contributes nothing."""
        return cls(attn={s: AttentionParams.zero_valued(d) for s in SYNC_SITES})

    @classmethod
    def seeded(cls, d: int, seed: int, **scalars) -> "SyncCoefficients":
        return cls(attn={s: AttentionParams.seeded(d, seed, s) for s in SYNC_SITES}, **scalars)


# ---------------------------------------------------------------------------
# Denoising state
# ---------------------------------------------------------------------------


@dataclass
class DenoiseState:
    parts: ObjectLatents
    local: LocalTokens
    global_tokens: GlobalTokens
    t: int

    def __post_init__(self):
        if self.local.d != self.parts.d:
            raise DimensionError(f"local token width {self.local.d} != part width {self.parts.d}")
        if len(self.global_tokens) > 0:
            glb_d = self.global_tokens.matrix(self.parts.d).shape[1]
            if glb_d != self.parts.d:
                raise DimensionError(f"global token width {glb_d} != part width {self.parts.d}")
        if self.t < 0:
            raise InputError(f"t must be >= 0, got {self.t}")

    @property
    def d(self) -> int:
        return self.parts.d

    def copy(self) -> "DenoiseState":
        return DenoiseState(self.parts.copy(), self.local.copy(), self.global_tokens.copy(), self.t)


def make_state(obj: ObjectLatents, semantics: SemanticLatents, t: int = 0) -> DenoiseState:
    return DenoiseState(obj.copy(), semantics.local.copy(), semantics.global_tokens.copy(), t)


def empty_local(d: int) -> LocalTokens:
    """A single fully-padded local token row (prompt-free placeholder)."""
    return LocalTokens(np.zeros((1, d)), [], np.zeros(1, dtype=bool))


# ---------------------------------------------------------------------------
# Synchronization blocks
# ---------------------------------------------------------------------------


def intra_part_sync(state: DenoiseState, coeffs: SyncCoefficients) -> DenoiseState:
    """Within-part alignment, sequentially per part:

    geo += a3d*Attn(geo, app); app += a2d*Attn(app, geo);
    geo += l3d*Attn(geo, S_loc); app += l2d*Attn(app, S_loc);
    part streams enter every attention call with the identity vector
    added; padded local rows are masked out.
    """
    loc = state.local.vectors
    mask = state.local.mask
    at = coeffs.attn
    new_parts = []
    for p in state.parts.parts:
        e = p.identity[None, :]
        g, a = p.geo, p.app
        g = g + coeffs.alpha_3d * attention(g + e, a + e, at["intra_geo_app"])
        a = a + coeffs.alpha_2d * attention(a + e, g + e, at["intra_app_geo"])
        g = g + coeffs.lambda_3d * attention(g + e, loc, at["intra_geo_loc"], context_mask=mask)
        a = a + coeffs.lambda_2d * attention(a + e, loc, at["intra_app_loc"], context_mask=mask)
        new_parts.append(replace(p, geo=g, app=a, identity=p.identity.copy()))
    return DenoiseState(ObjectLatents(new_parts), state.local.copy(), state.global_tokens.copy(), state.t)


def inter_part_sync(
    state: DenoiseState,
    coeffs: SyncCoefficients,
    update_planner: bool = True,
) -> DenoiseState:
    """Cross-part message passing, global-token guidance, planner update.

    Message passing attends over the bound streams of all parts as they
    were at block entry (simultaneous reads, which is what makes the block
    commute with part permutation). With no global tokens the guidance and
    planner updates are skipped and only message passing applies.
    """
    at = coeffs.attn
    d = state.d
    bound_geo = [p.geo + p.identity[None, :] for p in state.parts.parts]
    bound_app = [p.app + p.identity[None, :] for p in state.parts.parts]
    ctx_geo = np.concatenate(bound_geo, axis=0)
    ctx_app = np.concatenate(bound_app, axis=0)
    glb = state.global_tokens.matrix(d)
    have_glb = len(state.global_tokens) > 0

    new_parts = []
    for p in state.parts.parts:
        e = p.identity[None, :]
        g = p.geo + attention(p.geo + e, ctx_geo, at["inter_geo_msg"])
        a = p.app + attention(p.app + e, ctx_app, at["inter_app_msg"])
        if have_glb:
            g = g + coeffs.beta_3d * attention(g + e, glb, at["inter_geo_glb"])
            a = a + coeffs.beta_2d * attention(a + e, glb, at["inter_app_glb"])
        new_parts.append(replace(p, geo=g, app=a, identity=p.identity.copy()))

    new_globals = state.global_tokens.copy()
    if have_glb and update_planner:
        pooled = np.stack(
            [
                pool_part(p.geo + p.identity[None, :], p.app + p.identity[None, :], coeffs.pool_proj)
                for p in new_parts
            ]
        )
        new_globals = state.global_tokens.with_matrix(
            glb + coeffs.eta * attention(glb, pooled, at["planner"])
        )
    return DenoiseState(ObjectLatents(new_parts), state.local.copy(), new_globals, state.t)


# ---------------------------------------------------------------------------
# Denoisers
# ---------------------------------------------------------------------------


class Denoiser:
    """Noise predictor: predict(stream, cross, S_glb, S_loc, t, sched) -> like stream."""

    def predict(self, primary, cross, glb, loc, t, sched) -> np.ndarray:
        raise NotImplementedError


class ZeroDenoiser(Denoiser):
    mode = "zero"

    def predict(self, primary, cross, glb, loc, t, sched) -> np.ndarray:
        return np.zeros_like(np.asarray(primary, dtype=np.float64))


class KnownNoiseDenoiser(Denoiser):
    """Returns a fixed noise array (the 'perfect denoiser' test double)."""

    mode = "known-noise"

    def __init__(self, noise: np.ndarray):
        self.noise = np.asarray(noise, dtype=np.float64)

    def predict(self, primary, cross, glb, loc, t, sched) -> np.ndarray:
        if self.noise.shape != np.asarray(primary).shape:
            raise DimensionError("stored noise does not match stream shape")
        return self.noise.copy()


class AnalyticGaussianDenoiser(Denoiser):
    """Optimal elementwise predictor for a Gaussian target N(mu, s^2).

    With x_t = alpha*x0 + sigma*eps the posterior-mean noise estimate is
    sigma_t * (x_t - alpha_t*mu) / (alpha_t^2 s^2 + sigma_t^2).
    """

    mode = "analytic-gaussian"

    def __init__(self, mu: float = 0.0, s: float = 1.0):
        if s <= 0:
            raise InputError("target std must be positive")
        self.mu = float(mu)
        self.s = float(s)

    def predict(self, primary, cross, glb, loc, t, sched) -> np.ndarray:
        x = np.asarray(primary, dtype=np.float64)
        a, sg = float(sched.alpha[t]), float(sched.sigma[t])
        return sg * (x - a * self.mu) / (a**2 * self.s**2 + sg**2)


class ReferenceMlpDenoiser(Denoiser):
    """Two token-wise affine layers with a tanh in between.

    Per token row the input features are [row, mean(cross), mean(S_loc over
    real rows), mean(S_glb), alpha_t, sigma_t]; the output has width d.
    Gradients of the squared-error diffusion loss with respect to all four
    parameter arrays are computed in closed form (see ``backprop``):

        out = W2 tanh(W1 f + b1) + b2
        dL/dout = 2w (out - eps)
        dL/dW2 = dL/dout . H^T          dL/db2 = sum_rows dL/dout
        dL/dH  = dL/dout . W2,  dL/dZ = dL/dH * (1 - H^2)
        dL/dW1 = dL/dZ . f^T            dL/db1 = sum_rows dL/dZ
    """

    mode = "reference-mlp"

    def __init__(self, d: int, hidden: int = 32, seed: int = 0):
        self.d = d
        self.hidden = hidden
        self.n_features = 4 * d + 2
        rng = substream(seed, "reference-mlp")
        self.w1 = rng.uniform(-1, 1, size=(hidden, self.n_features)) / np.sqrt(self.n_features)
        self.b1 = np.zeros(hidden)
        self.w2 = rng.uniform(-1, 1, size=(d, hidden)) / np.sqrt(hidden)
        self.b2 = np.zeros(d)

    # -- parameter plumbing ------------------------------------------------

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}

    def params_flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.param_arrays().values()])

    def set_params_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        off = 0
        for name, arr in self.param_arrays().items():
            n = arr.size
            setattr(self, name, flat[off : off + n].reshape(arr.shape).copy())
            off += n
        if off != flat.size:
            raise DimensionError("flat parameter vector has the wrong length")

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.param_arrays().items()}

    # -- forward / backward -------------------------------------------------

    def _features(self, primary, cross, glb, loc, t, sched) -> np.ndarray:
        x = np.asarray(primary, dtype=np.float64)
        n = x.shape[0]
        mean_cross = (
            np.asarray(cross, dtype=np.float64).mean(axis=0) if cross is not None else np.zeros(self.d)
        )
        if loc is not None and loc.mask.any():
            mean_loc = loc.vectors[loc.mask].mean(axis=0)
        else:
            mean_loc = np.zeros(self.d)
        mean_glb = glb.mean(axis=0) if glb is not None and glb.shape[0] > 0 else np.zeros(self.d)
        scal = np.array([sched.alpha[t], sched.sigma[t]])
        tail = np.concatenate([mean_cross, mean_loc, mean_glb, scal])
        return np.concatenate([x, np.tile(tail, (n, 1))], axis=1)

    def forward(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        hidden = np.tanh(feats @ self.w1.T + self.b1)
        return hidden @ self.w2.T + self.b2, hidden

    def predict(self, primary, cross, glb, loc, t, sched) -> np.ndarray:
        out, _ = self.forward(self._features(primary, cross, glb, loc, t, sched))
        return out

    def backprop(self, feats, hidden, residual, weight, grads) -> None:
        """Accumulate d(weight * ||out - eps||^2)/dparams into ``grads``.

        ``residual`` is out - eps for this call.
        """
        dout = 2.0 * weight * residual
        grads["w2"] += dout.T @ hidden
        grads["b2"] += dout.sum(axis=0)
        dz = (dout @ self.w2) * (1.0 - hidden**2)
        grads["w1"] += dz.T @ feats
        grads["b1"] += dz.sum(axis=0)


@dataclass
class DenoiserBundle:
    """The three noise predictors used in one run (geometry, appearance, local)."""

    n3d: Denoiser
    n2d: Denoiser
    nloc: Denoiser

    @classmethod
    def analytic(cls, mu: float = 0.0, s: float = 1.0) -> "DenoiserBundle":
        return cls(
            AnalyticGaussianDenoiser(mu, s),
            AnalyticGaussianDenoiser(mu, s),
            AnalyticGaussianDenoiser(mu, s),
        )


def _checked_predict(denoiser: Denoiser, primary, cross, glb, loc, t, sched) -> np.ndarray:
    eps = denoiser.predict(primary, cross, glb, loc, t, sched)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != np.asarray(primary).shape:
        raise DimensionError(
            f"denoiser contract violation: output shape {eps.shape} != stream shape {np.asarray(primary).shape}"
        )
    if not np.all(np.isfinite(eps)):
        raise NumericError("denoiser produced non-finite values")
    return eps


# ---------------------------------------------------------------------------
# DDIM stepping
# ---------------------------------------------------------------------------


def _ddim_update(x_t, eps, a_t, s_t, a_prev, s_prev) -> np.ndarray:
    x0 = (x_t - s_t * eps) / a_t
    return a_prev * x0 + s_prev * eps


def denoise_step(
    state: DenoiseState,
    sched: NoiseSchedule,
    denoisers: DenoiserBundle,
    coeffs: SyncCoefficients,
    update_planner: bool = True,
) -> DenoiseState:
    """One deterministic step from level t to t-1.

    Synchronize the noised state, predict the noise of every diffused
    stream, then apply x_{t-1} = alpha_{t-1} x0 + sigma_{t-1} eps with
    x0 = (x_t - sigma_t eps)/alpha_t. Global tokens carry forward, touched
    only by the planner residual.
    """
    t = state.t
    if t < 1:
        raise InputError(f"denoise_step needs t >= 1, got {t}")
    if t > sched.T:
        raise InputError(f"t={t} exceeds schedule T={sched.T}")
    synced = inter_part_sync(intra_part_sync(state, coeffs), coeffs, update_planner=update_planner)
    a_t, s_t = float(sched.alpha[t]), float(sched.sigma[t])
    a_p, s_p = float(sched.alpha[t - 1]), float(sched.sigma[t - 1])
    glb = synced.global_tokens.matrix(state.d)

    new_parts = []
    for p in synced.parts.parts:
        eps_g = _checked_predict(denoisers.n3d, p.geo, p.app, glb, synced.local, t, sched)
        eps_a = _checked_predict(denoisers.n2d, p.app, p.geo, glb, synced.local, t, sched)
        new_parts.append(
            replace(
                p,
                geo=_ddim_update(p.geo, eps_g, a_t, s_t, a_p, s_p),
                app=_ddim_update(p.app, eps_a, a_t, s_t, a_p, s_p),
                identity=p.identity.copy(),
            )
        )
    loc = synced.local
    eps_l = _checked_predict(denoisers.nloc, loc.vectors, None, glb, loc, t, sched)
    loc_new = _ddim_update(loc.vectors, eps_l, a_t, s_t, a_p, s_p)
    loc_new[~loc.mask] = 0.0  # padded rows stay structurally zero
    return DenoiseState(
        ObjectLatents(new_parts),
        LocalTokens(loc_new, list(loc.phrases), loc.mask.copy()),
        synced.global_tokens,
        t - 1,
    )


@dataclass(frozen=True)
class LatentDims:
    d: int = 32
    t3d: int = 64
    t2d: int = 256


def sample(
    n_parts: int,
    dims: LatentDims,
    semantics: SemanticLatents,
    sched: NoiseSchedule,
    denoisers: DenoiserBundle,
    seed: int,
    coeffs: SyncCoefficients | None = None,
    identity_table: IdentityTable | None = None,
    labels: dict[int, str] | None = None,
    planner_reset: bool = False,
) -> ObjectLatents:
    """Generate an object by denoising Gaussian part streams from T to 0.

    Deterministic given the seed: every noise draw comes from a named
    sub-stream, so part i sees the same initialization regardless of how
    many parts exist. ``planner_reset`` restores the global tokens to
    their encoded values after every step instead of accumulating planner
    updates.
    """
    if n_parts < 1:
        raise InputError("need at least one part")
    coeffs = coeffs if coeffs is not None else SyncCoefficients.identity(dims.d)
    table = identity_table if identity_table is not None else IdentityTable(dims.d, seed=0)
    labels = labels or {}
    parts = []
    for i in range(n_parts):
        geo = substream(seed, "init", i, "geo").standard_normal((dims.t3d, dims.d))
        app = substream(seed, "init", i, "app").standard_normal((dims.t2d, dims.d))
        parts.append(PartLatent(i, geo, app, table.row(i), labels.get(i, "")))
    loc_clean = semantics.local
    eps_loc = substream(seed, "init", "local").standard_normal(loc_clean.vectors.shape)
    loc_T = forward_noise(loc_clean.vectors, sched, sched.T, eps_loc)
    loc_T[~loc_clean.mask] = 0.0
    state = DenoiseState(
        ObjectLatents(parts),
        LocalTokens(loc_T, list(loc_clean.phrases), loc_clean.mask.copy()),
        semantics.global_tokens.copy(),
        sched.T,
    )
    glb0 = semantics.global_tokens.copy()
    for _ in range(sched.T, 0, -1):
        state = denoise_step(state, sched, denoisers, coeffs)
        if planner_reset:
            state = DenoiseState(state.parts, state.local, glb0.copy(), state.t)
    return state.parts


# ---------------------------------------------------------------------------
# Diffusion loss and the reference trainer
# ---------------------------------------------------------------------------


def _noised_state(state: DenoiseState, sched: NoiseSchedule, t: int, rng) -> tuple[DenoiseState, dict]:
    """Forward-noise every diffused stream of a clean state; returns the injected noise."""
    noise = {}
    parts = []
    for p in state.parts.parts:
        eg = rng.standard_normal(p.geo.shape)
        ea = rng.standard_normal(p.app.shape)
        noise[("geo", p.part_id)] = eg
        noise[("app", p.part_id)] = ea
        parts.append(
            replace(
                p,
                geo=forward_noise(p.geo, sched, t, eg),
                app=forward_noise(p.app, sched, t, ea),
                identity=p.identity.copy(),
            )
        )
    el = rng.standard_normal(state.local.vectors.shape)
    loc_vec = forward_noise(state.local.vectors, sched, t, el)
    loc_vec[~state.local.mask] = 0.0
    noised = DenoiseState(
        ObjectLatents(parts),
        LocalTokens(loc_vec, list(state.local.phrases), state.local.mask.copy()),
        state.global_tokens.copy(),
        t,
    )
    return noised, noise


def diffusion_loss(
    batch: list[DenoiseState],
    sched: NoiseSchedule,
    denoisers: DenoiserBundle,
    seed: int,
    coeffs: SyncCoefficients | None = None,
    weight_mode: str = "snr",
    _grads: dict | None = None,
) -> tuple[float, float, float]:
    """(L3D, L2D, weighted total) over a batch of clean states.

    Per sample: t ~ U{1..T} and unit Gaussian noise (both seeded), streams
    are noised and synchronized, each part's denoisers predict the noise,
    and the squared errors are averaged over parts. The total applies the
    timestep weight w(t) (or 1 in "uniform" mode) and averages the batch.
    """
    if not batch:
        raise InputError("diffusion_loss needs a nonempty batch")
    if weight_mode not in ("snr", "uniform"):
        raise InputError(f"unknown weight mode {weight_mode!r}")
    coeffs = coeffs if coeffs is not None else SyncCoefficients.identity(batch[0].d)
    l3d_sum = l2d_sum = total = 0.0
    for k, clean in enumerate(batch):
        rng = substream(seed, "loss", k)
        t = int(rng.integers(1, sched.T + 1))
        noised, noise = _noised_state(clean, sched, t, rng)
        synced = inter_part_sync(intra_part_sync(noised, coeffs), coeffs)
        glb = synced.global_tokens.matrix(clean.d)
        n = synced.parts.n_parts
        w = snr_weight(sched, t)[1] if weight_mode == "snr" else 1.0
        l3d = l2d = 0.0
        for p in synced.parts.parts:
            for stream_name, den, primary, cross in (
                ("geo", denoisers.n3d, p.geo, p.app),
                ("app", denoisers.n2d, p.app, p.geo),
            ):
                eps_true = noise[(stream_name, p.part_id)]
                if _grads is not None and isinstance(den, ReferenceMlpDenoiser):
                    feats = den._features(primary, cross, glb, synced.local, t, sched)
                    out, hidden = den.forward(feats)
                    residual = out - eps_true
                    # batch-mean of w * (1/N) * ||residual||^2
                    den.backprop(feats, hidden, residual, w / (n * len(batch)), _grads[id(den)])
                else:
                    out = _checked_predict(den, primary, cross, glb, synced.local, t, sched)
                    residual = out - eps_true
                err = float(np.sum(residual**2))
                if stream_name == "geo":
                    l3d += err / n
                else:
                    l2d += err / n
        l3d_sum += l3d
        l2d_sum += l2d
        total += w * (l3d + l2d)
    b = len(batch)
    return l3d_sum / b, l2d_sum / b, total / b


@dataclass
class TrainResult:
    denoiser: "ReferenceMlpDenoiser"
    losses: list[float]
    heldout_before: float
    heldout_after: float


def loss_and_grads(
    denoiser: ReferenceMlpDenoiser,
    batch: list[DenoiseState],
    sched: NoiseSchedule,
    seed: int,
    coeffs: SyncCoefficients,
    weight_mode: str,
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted total loss and its analytic gradients for one shared MLP
    serving both the geometry and appearance streams."""
    grads = {id(denoiser): denoiser.zero_grads()}
    bundle = DenoiserBundle(denoiser, denoiser, ZeroDenoiser())
    _, _, total = diffusion_loss(
        batch, sched, bundle, seed, coeffs=coeffs, weight_mode=weight_mode, _grads=grads
    )
    return total, grads[id(denoiser)]


def train_reference(
    denoiser: ReferenceMlpDenoiser,
    data: list[DenoiseState],
    steps: int,
    lr: float,
    sched: NoiseSchedule,
    coeffs: SyncCoefficients | None = None,
    seed: int = 0,
    heldout: list[DenoiseState] | None = None,
    phase_split: float = 0.5,
) -> TrainResult:
    """Train the reference MLP with Adam on the diffusion loss.

    Two phases: the first trains against the plain (uniformly weighted)
    loss with synchronization fixed at identity parameters; the second
    switches to the timestep-weighted loss under the provided sync
    coefficients. Sync parameters themselves are never trained here.
    """
    if not data:
        raise InputError("training needs data")
    d = data[0].d
    coeffs = coeffs if coeffs is not None else SyncCoefficients.identity(d)
    phase1 = SyncCoefficients.identity(d)
    heldout = heldout if heldout is not None else data
    eval_bundle = DenoiserBundle(denoiser, denoiser, ZeroDenoiser())
    heldout_before = diffusion_loss(heldout, sched, eval_bundle, seed=10_000 + seed, coeffs=coeffs)[2]

    m = {k: np.zeros_like(v) for k, v in denoiser.param_arrays().items()}
    v = {k: np.zeros_like(vv) for k, vv in denoiser.param_arrays().items()}
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    losses = []
    n_phase1 = int(np.floor(steps * phase_split))
    for step in range(steps):
        in_phase1 = step < n_phase1
        loss, grads = loss_and_grads(
            denoiser,
            data,
            sched,
            seed=seed * 1_000_003 + step,
            coeffs=phase1 if in_phase1 else coeffs,
            weight_mode="uniform" if in_phase1 else "snr",
        )
        if not np.isfinite(loss):
            raise NumericError(f"training diverged at step {step}: loss={loss}")
        losses.append(loss)
        if lr == 0.0:
            continue
        tt = step + 1
        for name, arr in denoiser.param_arrays().items():
            g = grads[name]
            m[name] = beta1 * m[name] + (1 - beta1) * g
            v[name] = beta2 * v[name] + (1 - beta2) * g**2
            m_hat = m[name] / (1 - beta1**tt)
            v_hat = v[name] / (1 - beta2**tt)
            setattr(denoiser, name, arr - lr * m_hat / (np.sqrt(v_hat) + eps_adam))
    heldout_after = diffusion_loss(heldout, sched, eval_bundle, seed=10_000 + seed, coeffs=coeffs)[2]
    return TrainResult(denoiser, losses, heldout_before, heldout_after)


# ---------------------------------------------------------------------------
# Inversion, editing, scene refinement
# ---------------------------------------------------------------------------


def _pack(state: DenoiseState) -> np.ndarray:
    chunks = []
    for p in state.parts.parts:
        chunks.append(p.geo.ravel())
        chunks.append(p.app.ravel())
    chunks.append(state.local.vectors.ravel())
    return np.concatenate(chunks)


def _unpack(vec: np.ndarray, template: DenoiseState, t: int) -> DenoiseState:
    off = 0
    parts = []
    for p in template.parts.parts:
        ng = p.geo.size
        geo = vec[off : off + ng].reshape(p.geo.shape).copy()
        off += ng
        na = p.app.size
        app = vec[off : off + na].reshape(p.app.shape).copy()
        off += na
        parts.append(replace(p, geo=geo, app=app, identity=p.identity.copy()))
    nl = template.local.vectors.size
    loc_vec = vec[off : off + nl].reshape(template.local.vectors.shape).copy()
    loc_vec[~template.local.mask] = 0.0
    return DenoiseState(
        ObjectLatents(parts),
        LocalTokens(loc_vec, list(template.local.phrases), template.local.mask.copy()),
        template.global_tokens.copy(),
        t,
    )


@dataclass
class InversionResult:
    state: DenoiseState
    trajectory: list[DenoiseState]  # index by level: trajectory[t] is the state at t
    residuals: list[float]


def ddim_invert(
    obj: ObjectLatents,
    semantics: SemanticLatents,
    sched: NoiseSchedule,
    denoisers: DenoiserBundle,
    tau: int,
    coeffs: SyncCoefficients | None = None,
    max_iter: int = 64,
    tol: float = 1e-12,
) -> InversionResult:
    """Deterministically reverse the sampler from level 0 up to tau.

    Each reverse step solves step(x_t) = x_{t-1} for x_t by damped
    fixed-point iteration on the library's own forward step, so running
    the sampler back down reproduces the inputs to solver precision.
    Global tokens are held fixed throughout (the planner never runs in the
    inversion/editing regime).
    """
    if not (0 <= tau <= sched.T):
        raise InputError(f"tau={tau} outside [0, {sched.T}]")
    coeffs = coeffs if coeffs is not None else SyncCoefficients.identity(obj.d)
    state0 = DenoiseState(obj.copy(), semantics.local.copy(), semantics.global_tokens.copy(), 0)

    def forward(x: np.ndarray, t: int) -> np.ndarray:
        return _pack(denoise_step(_unpack(x, state0, t), sched, denoisers, coeffs, update_planner=False))

    trajectory = [state0]
    residuals: list[float] = []
    for t in range(1, tau + 1):
        y = _pack(trajectory[t - 1])
        best_x, best_res = _solve_level(lambda x: forward(x, t), y, max_iter, tol)
        if not np.all(np.isfinite(best_x)):
            raise NumericError(f"inversion diverged at level {t}")
        if best_res > 1e-6:
            warnings.warn(
                f"inversion level {t} converged only to residual {best_res:.2e}; "
                "the step map is ill-conditioned at this state (saturated attention?)",
                stacklevel=2,
            )
        residuals.append(best_res)
        trajectory.append(_unpack(best_x, state0, t))
    return InversionResult(trajectory[tau], trajectory, residuals)


def _solve_level(fwd, y: np.ndarray, max_iter: int, tol: float) -> tuple[np.ndarray, float]:
    """Solve fwd(x) = y for one inversion level.

    Fixed-point iteration with a monotone backtracking step size handles
    the trained/analytic regime in a handful of evaluations; levels it
    cannot crack escalate to matrix-free Newton-Krylov. Returns the best
    iterate and its max-abs residual.
    """
    best_x = y.copy()
    best_delta = y - fwd(best_x)
    best_res = float(np.max(np.abs(best_delta)))
    lam = 1.0
    for _ in range(max_iter):
        if best_res <= tol or lam < 1e-8:
            break
        x_try = best_x + lam * best_delta
        if not np.all(np.isfinite(x_try)):
            lam *= 0.5
            continue
        delta_try = y - fwd(x_try)
        res_try = float(np.max(np.abs(delta_try)))
        if res_try < best_res:
            best_x, best_delta, best_res = x_try, delta_try, res_try
            lam = min(1.0, lam * 1.5)
        else:
            lam *= 0.5
    if best_res > tol:
        try:
            x_nk = sp_newton_krylov(lambda x: fwd(x) - y, best_x, f_tol=max(tol, 1e-13), maxiter=max_iter)
            res_nk = float(np.max(np.abs(fwd(x_nk) - y)))
            if np.all(np.isfinite(x_nk)) and res_nk < best_res:
                best_x, best_res = np.asarray(x_nk, dtype=np.float64), res_nk
        except Exception:  # keep the fixed-point iterate; residual is reported
            pass
    return best_x, best_res


def redenoise(
    state: DenoiseState,
    sched: NoiseSchedule,
    denoisers: DenoiserBundle,
    coeffs: SyncCoefficients | None = None,
    pin_trajectory: list[DenoiseState] | None = None,
    target: int | None = None,
) -> DenoiseState:
    """Run the sampler from the state's level down to 0 with the planner frozen.

    With ``pin_trajectory`` set, every part except ``target`` is pinned to
    its recorded trajectory value after each step (bit-copies), which is
    the freeze used by part editing.
    """
    coeffs = coeffs if coeffs is not None else SyncCoefficients.identity(state.d)
    cur = state.copy()
    while cur.t > 0:
        cur = denoise_step(cur, sched, denoisers, coeffs, update_planner=False)
        if pin_trajectory is not None:
            ref = pin_trajectory[cur.t]
            parts = []
            for p in cur.parts.parts:
                if p.part_id == target:
                    parts.append(p)
                else:
                    src = ref.parts.part_by_id(p.part_id)
                    parts.append(replace(p, geo=src.geo.copy(), app=src.app.copy(), identity=p.identity.copy()))
            cur = DenoiseState(ObjectLatents(parts), cur.local, cur.global_tokens, cur.t)
    return cur


def edit_part(
    obj: ObjectLatents,
    target: int,
    new_local: LocalTokens,
    tau: int,
    sched: NoiseSchedule,
    denoisers: DenoiserBundle,
    semantics: SemanticLatents,
    coeffs: SyncCoefficients | None = None,
    k_sync: int = 2,
) -> ObjectLatents:
    """Re-denoise one part under new local semantics, freezing the rest.

    The object is inverted to level tau, the local token stream is shifted
    by alpha_tau * (new - old) (an identical prompt therefore reproduces
    the round trip), and only the target part evolves on the way back
    down; the other parts are pinned to their inverted trajectory. A final
    k_sync synchronization passes at level 0 restore coherence.
    """
    obj.part_by_id(target)  # raises on unknown id
    coeffs = coeffs if coeffs is not None else SyncCoefficients.identity(obj.d)
    if new_local.vectors.shape != semantics.local.vectors.shape:
        raise DimensionError("new local tokens must match the original (K_m, d) block")
    inv = ddim_invert(obj, semantics, sched, denoisers, tau, coeffs=coeffs)
    state = inv.state.copy()
    delta = new_local.vectors - semantics.local.vectors
    loc_vec = state.local.vectors + float(sched.alpha[tau]) * delta
    loc_vec[~new_local.mask] = 0.0
    state = DenoiseState(
        state.parts,
        LocalTokens(loc_vec, list(new_local.phrases), new_local.mask.copy()),
        state.global_tokens,
        state.t,
    )
    state = redenoise(
        state, sched, denoisers, coeffs, pin_trajectory=inv.trajectory, target=target
    )
    for _ in range(k_sync):
        state = inter_part_sync(intra_part_sync(state, coeffs), coeffs, update_planner=False)
    return state.parts


def scene_refine(
    objects: list[ObjectLatents],
    scene_triplets,
    emb: Embedder,
    coeffs: SyncCoefficients | None = None,
    k_refine: int = 2,
    object_names: dict[int, str] | None = None,
    identity_table: IdentityTable | None = None,
) -> list[ObjectLatents]:
    """Jointly refine independently generated objects under scene relations.

    Each object is pooled to a single macro token; the macro tokens run
    through the cross-part synchronization block under the scene tokens
    encoded from the inter-object triplets; and each object's macro
    residual is broadcast back onto every token of both its streams.
    """
    if not objects:
        raise InputError("scene refinement needs at least one object")
    d = objects[0].d
    for o in objects:
        if o.d != d:
            raise DimensionError("all objects must share the latent width")
    names = object_names or {i: f"obj{i}" for i in range(len(objects))}
    for t in scene_triplets:
        for oid in (t.i, t.j):
            if not (0 <= oid < len(objects)):
                raise InputError(f"scene triplet references unknown object index {oid}")
    coeffs = coeffs if coeffs is not None else SyncCoefficients.identity(d)
    table = identity_table if identity_table is not None else IdentityTable(d, seed=0)
    scene_tokens = encode_global(scene_triplets, names, emb)
    result = [o.copy() for o in objects]
    for _ in range(k_refine):
        macros = []
        for o in result:
            geo_all = np.concatenate([p.geo for p in o.parts], axis=0)
            app_all = np.concatenate([p.app for p in o.parts], axis=0)
            macros.append(pool_part(geo_all, app_all, coeffs.pool_proj))
        macro_parts = [
            PartLatent(i, macros[i][None, :], macros[i][None, :], table.row(i), names.get(i, ""))
            for i in range(len(result))
        ]
        macro_state = DenoiseState(ObjectLatents(macro_parts), empty_local(d), scene_tokens, 0)
        synced = inter_part_sync(macro_state, coeffs, update_planner=True)
        for i, o in enumerate(result):
            residual = synced.parts.parts[i].geo[0] - macros[i]
            for p in o.parts:
                p.geo = p.geo + residual[None, :]
                p.app = p.app + residual[None, :]
        scene_tokens = synced.global_tokens
    return result
