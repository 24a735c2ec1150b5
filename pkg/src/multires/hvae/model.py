"""Dense hierarchical VAE with hand-derived reverse-mode gradients.

Layout
------
A state at resolution ``r`` is a flat vector of ``r * r * channels`` values
(pixel-major, channels fastest).  The encoder maps pixels to channels with a
per-pixel affine map, runs residual dense blocks ``h <- h + mlp(h)`` and
average-pools between resolutions.  The decoder starts from the zero vector
at the coarsest resolution and applies one cell per latent layer::

    p head(state)          -> mu_p, logvar_p, xpp
    q head([state, enc])   -> mu_q, logvar_q
    z = mu_q + exp(logvar_q / 2) * eps
    x1 = state + xpp + proj(z)      (residual cell)
    x1 = proj(z)                    (non-residual cell)
    state = x1 + mlp(x1)

then embeds into the next resolution by piecewise-constant upsampling.  The
pixel likelihood is a diagonal Gaussian with a learned log-variance per
pixel.  Every ``mlp`` is ``w2 @ gelu(w1 @ x + b1) + b2``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import rng as crng
from .config import HvaeConfig

LOGVAR_CLAMP = 30.0
LOG2PI = float(np.log(2.0 * np.pi))
_GC = float(np.sqrt(2.0 / np.pi))


class HvaeError(ValueError):
    pass


class LogvarRangeError(HvaeError):
    pass


class UnsupportedError(HvaeError):
    pass


# -- primitives ------------------------------------------------------------


def gelu(a):
    t = a * a
    t *= 0.044715 * _GC
    t += _GC
    t *= a
    np.tanh(t, out=t)
    g = t + 1.0
    g *= a
    g *= 0.5
    return g, t


def gelu_grad(a, t):
    return 0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * _GC * (1.0 + 3 * 0.044715 * a * a)


def fourier_features(h, betas):
    """``[h, sin(h 2^b pi), cos(h 2^b pi) for b in betas]`` along the last axis."""
    h = np.asarray(h, dtype=np.float64)
    parts = [h]
    for b in betas:
        w = 2.0**b * np.pi
        parts += [np.sin(h * w), np.cos(h * w)]
    return np.concatenate(parts, axis=-1)


def _fourier_back(h, betas, df):
    d = h.shape[-1]
    dh = df[..., :d].copy()
    for i, b in enumerate(betas):
        w = 2.0**b * np.pi
        ds = df[..., d * (1 + 2 * i) : d * (2 + 2 * i)]
        dc = df[..., d * (2 + 2 * i) : d * (3 + 2 * i)]
        dh += w * (np.cos(h * w) * ds - np.sin(h * w) * dc)
    return dh


def gaussian_kl(mu_q, logvar_q, mu_p, logvar_p, axis=None):
    """KL(N(mu_q, e^lq) || N(mu_p, e^lp)) for diagonal Gaussians, summed over ``axis``."""
    lq, lp = np.asarray(logvar_q, dtype=np.float64), np.asarray(logvar_p, dtype=np.float64)
    if np.any(np.abs(lq) > LOGVAR_CLAMP) or np.any(np.abs(lp) > LOGVAR_CLAMP):
        raise LogvarRangeError(f"log-variance outside [-{LOGVAR_CLAMP}, {LOGVAR_CLAMP}]")
    diff = np.asarray(mu_q, dtype=np.float64) - np.asarray(mu_p, dtype=np.float64)
    if diff.shape != lq.shape or lq.shape != lp.shape:
        raise HvaeError("gaussian_kl needs equal shapes")
    terms = 0.5 * (np.exp(lq - lp) + diff * diff * np.exp(-lp) - 1.0 + lp - lq)
    return terms.sum(axis=axis)


def _kl(mu_q, lq, mu_p, lp):
    diff = mu_q - mu_p
    terms = np.exp(lq - lp) + diff * diff * np.exp(-lp) + (lp - lq - 1.0)
    return 0.5 * terms.sum(axis=1)


def _kl_grads(mu_q, lq, mu_p, lp):
    diff = mu_q - mu_p
    ip = np.exp(-lp)
    r = np.exp(lq - lp)
    d_mu = diff * ip
    return d_mu, 0.5 * (r - 1.0), -d_mu, 0.5 * (1.0 - r - diff * diff * ip)


def _clamp(raw):
    return np.clip(raw, -LOGVAR_CLAMP, LOGVAR_CLAMP), np.abs(raw) <= LOGVAR_CLAMP


def _normalize(x):
    n = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    n = np.maximum(n, 1e-300)
    return x / n, n


def _normalize_back(y, n, dy):
    return (dy - y * np.sum(y * dy, axis=1, keepdims=True)) / n


def _pool(h, r, r2, c):
    k = r // r2
    return h.reshape(-1, r2, k, r2, k, c).mean(axis=(2, 4)).reshape(len(h), -1)


def _pool_back(dy, r, r2, c):
    k = r // r2
    d = dy.reshape(-1, r2, 1, r2, 1, c) / (k * k)
    return np.broadcast_to(d, (len(dy), r2, k, r2, k, c)).reshape(len(dy), -1)


def _embed(x, r, r2, c):
    k = r2 // r
    return np.broadcast_to(x.reshape(-1, r, 1, r, 1, c), (len(x), r, k, r, k, c)).reshape(len(x), -1)


def _embed_back(dy, r, r2, c):
    k = r2 // r
    return dy.reshape(-1, r, k, r, k, c).sum(axis=(2, 4)).reshape(len(dy), -1)


def _mlp(P, pre, x):
    a = x @ P[pre + "w1"].T + P[pre + "b1"]
    g, t = gelu(a)
    return g @ P[pre + "w2"].T + P[pre + "b2"], (x, a, t, g)


def _mlp_back(P, G, pre, cache, dy, need_dx=True):
    x, a, t, g = cache
    G[pre + "w2"] += dy.T @ g
    G[pre + "b2"] += dy.sum(axis=0)
    da = (dy @ P[pre + "w2"]) * gelu_grad(a, t)
    G[pre + "w1"] += da.T @ x
    G[pre + "b1"] += da.sum(axis=0)
    return da @ P[pre + "w1"] if need_dx else None


# -- parameters ------------------------------------------------------------


def param_layout(config):
    """Ordered ``(name, shape, init)`` with init in {"fan_in", "residual", "zero", "one"}.

    ``residual`` is fan-in init further scaled by ``1/sqrt(n_layers)``, used
    for the last layer of every residual block so the state does not grow
    with depth at initialisation.
    """
    c, H, Z = config.channels, config.hidden_width, config.latent_channels
    out = [("in.w", (c,), "fan_in"), ("in.b", (c,), "zero")]

    def mlp(pre, d_in, d_out, last):
        return [
            (pre + "w1", (H, d_in), "fan_in"),
            (pre + "b1", (H,), "zero"),
            (pre + "w2", (d_out, H), last),
            (pre + "b2", (d_out,), "zero"),
        ]

    for i in range(len(config.resolutions)):
        D = config.state_dim(i)
        for k in range(config.blocks):
            out += mlp(f"enc{i}.{k}.", config.widen("block", D), D, "residual")
    for i in range(len(config.resolutions)):
        D = config.state_dim(i)
        for k in range(config.blocks):
            pre = f"dec{i}.{k}."
            out += mlp(pre + "q.", config.widen("heads", 2 * D), 2 * Z, "zero")
            out += mlp(pre + "p.", config.widen("heads", D), 2 * Z + D, "zero")
            out += [(pre + "z.w", (D, config.widen("latent", Z)), "fan_in"), (pre + "z.b", (D,), "zero")]
            out += mlp(pre + "r.", config.widen("block", D), D, "residual")
    out += [("out.w", (c,), "one"), ("out.b", (1,), "zero"), ("out.logvar", (config.pixels,), "zero")]
    return out


@lru_cache(maxsize=64)
def _offsets(config):
    out, pos = [], 0
    for name, shape, _ in param_layout(config):
        size = int(np.prod(shape))
        out.append((name, shape, pos, size))
        pos += size
    return tuple(out), pos


def named_views(config, flat):
    """Name -> array views into one flat buffer, in layout order."""
    return {name: flat[pos : pos + size].reshape(shape) for name, shape, pos, size in _offsets(config)[0]}


class Grads(dict):
    """Gradient arrays by parameter name, backed by the flat vector ``flat``."""

    def __init__(self, config, flat=None):
        self.flat = np.zeros(_offsets(config)[1]) if flat is None else flat
        super().__init__(named_views(config, self.flat))


class HvaeParams:
    """Parameter arrays stored as named views into a single flat vector.

    Weight-shared blocks own one record each; every application reads the
    same views.
    """

    def __init__(self, config, flat):
        n = _offsets(config)[1]
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise HvaeError(f"parameter vector has {flat.size} values, layout needs {n}")
        self.config = config
        self.flat = flat
        self.arrays = named_views(config, flat)

    def __getitem__(self, name):
        return self.arrays[name]

    @property
    def n_params(self):
        return int(self.flat.size)

    def copy(self):
        return HvaeParams(self.config, self.flat.copy())

    def to_vector(self):
        return self.flat.copy()

    @classmethod
    def from_vector(cls, config, vec):
        return cls(config, np.array(vec, dtype=np.float64))

    def zeros_like(self):
        return Grads(self.config)


def init_params(config, seed=0):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, zero-initialised head outputs."""
    rng = np.random.default_rng(seed)
    depth = np.sqrt(config.n_layers)
    params = HvaeParams(config, np.zeros(_offsets(config)[1]))
    arrays = params.arrays
    for name, shape, kind in param_layout(config):
        if kind == "zero":
            continue
        if kind == "one":
            arrays[name][...] = 1.0
        else:
            bound = 1.0 / np.sqrt(shape[-1] if len(shape) > 1 else 1)
            if kind == "residual":
                bound /= depth
            arrays[name][...] = rng.uniform(-bound, bound, size=shape)
    return params


# -- forward / backward ----------------------------------------------------


@dataclass
class ElboBreakdown:
    """Batch-mean ELBO parts in nats per image; ``*_b`` hold per-datum values."""

    recon: float
    kl_per_layer: np.ndarray
    elbo: float
    recon_b: np.ndarray
    kl_b: np.ndarray
    dims: int
    finite: bool = True

    @property
    def nll_per_dim(self):
        return -self.elbo / self.dims


@dataclass
class NormProbe:
    forward_mean: np.ndarray
    forward_std: np.ndarray
    backward_mean: np.ndarray
    backward_std: np.ndarray
    forward_res: np.ndarray
    backward_res: np.ndarray

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in self.__dataclass_fields__}


def layer_noise(seed, batch, config, stream=0):
    """Standard normals ``(batch, n_layers, latent_channels)`` keyed by (seed, row, stream)."""
    L, Z = config.n_layers, config.latent_channels
    return crng.normals(seed, np.arange(batch), 0, L * Z, stream=stream).reshape(batch, L, Z)


def _site(config, site, x):
    return fourier_features(x, config.fourier_betas) if config.fourier_betas and config.fourier_site == site else x


def _site_back(config, site, x, dx):
    return _fourier_back(x, config.fourier_betas, dx) if config.fourier_betas and config.fourier_site == site else dx


def _encode(P, cfg, xb, keep):
    c, R, A = cfg.channels, cfg.resolutions, cfg.applications
    h = (xb[:, :, None] * P["in.w"] + P["in.b"]).reshape(len(xb), -1)
    acts, caches = [], []
    for i in range(len(R)):
        if i > 0:
            h = _pool(h, R[i - 1], R[i], c)
        row = []
        for a in range(A):
            pre = f"enc{i}.{a // cfg.repeats}."
            u = _site(cfg, "block", h)
            y, mc = _mlp(P, pre, u)
            hn = h + y
            nrm = None
            if cfg.normalize_state:
                hn, nrm = _normalize(hn)
            if keep:
                caches.append((i, a, h, mc, hn, nrm))
            h = hn
            row.append(h)
        acts.append(row)
    return acts, caches


def _skip_index(cfg, a):
    return cfg.applications - 1 if cfg.skip_mode == "async" else cfg.applications - 1 - a


def _decode(P, cfg, batch, eps, enc_acts=None, temperature=1.0, keep=False, probe=False):
    """Top-down pass.  Posterior sampling when ``enc_acts`` is given, else prior sampling."""
    c, R, A, Z = cfg.channels, cfg.resolutions, cfg.applications, cfg.latent_channels
    nr = len(R)
    state = np.zeros((batch, cfg.state_dim(nr - 1)))
    kls, caches, norms = [], [], []
    layer = 0
    for i in reversed(range(nr)):
        if i < nr - 1:
            state = _embed(state, R[i + 1], R[i], c)
        D = cfg.state_dim(i)
        for a in range(A):
            pre = f"dec{i}.{a // cfg.repeats}."
            pin = _site(cfg, "heads", state)
            po, pc = _mlp(P, pre + "p.", pin)
            mu_p, (lv_p, mp) = po[:, :Z], _clamp(po[:, Z : 2 * Z])
            xpp = po[:, 2 * Z :]
            e = eps[:, layer, :]
            if enc_acts is not None:
                qraw = np.concatenate([state, enc_acts[i][_skip_index(cfg, a)]], axis=1)
                qo, qc = _mlp(P, pre + "q.", _site(cfg, "heads", qraw))
                mu_q, (lv_q, mq) = qo[:, :Z], _clamp(qo[:, Z:])
                sd = np.exp(0.5 * lv_q)
                z = mu_q + sd * e
                kls.append(_kl(mu_q, lv_q, mu_p, lv_p))
            else:
                z = mu_p + temperature * np.exp(0.5 * lv_p) * e
            zin = _site(cfg, "latent", z)
            zp = zin @ P[pre + "z.w"].T + P[pre + "z.b"]
            x1 = state + xpp + zp if cfg.residual_cell else zp
            n1 = None
            if cfg.normalize_state:
                x1, n1 = _normalize(x1)
            if probe:
                norms.append(np.sqrt(np.sum(x1 * x1, axis=1)))
            ry, rc = _mlp(P, pre + "r.", _site(cfg, "block", x1))
            if keep:
                caches.append(
                    dict(i=i, a=a, pre=pre, state=state, pc=pc, mp=mp, qraw=qraw, qc=qc, mq=mq,
                         mu_q=mu_q, lv_q=lv_q, mu_p=mu_p, lv_p=lv_p, sd=sd, e=e, z=z, zin=zin,
                         x1=x1, n1=n1, rc=rc, D=D)
                )
            state = x1 + ry
            layer += 1
    return state, kls, caches, norms


def _output(P, cfg, state):
    s3 = state.reshape(len(state), cfg.pixels, cfg.channels)
    return s3 @ P["out.w"] + P["out.b"][0], s3


def _prepare(cfg, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(len(x), -1)
    if x.ndim != 2 or x.shape[1] != cfg.pixels:
        raise HvaeError(f"expected images of {cfg.image_size}x{cfg.image_size}, got {x.shape}")
    return x


def forward(params, x, seed=0, keep=False, stream=0, eps=None):
    """Posterior pass on a batch; returns ``(ElboBreakdown, cache)``."""
    P, cfg = params.arrays, params.config
    xb = _prepare(cfg, x)
    B = len(xb)
    if eps is None:
        eps = layer_noise(seed, B, cfg, stream)
    with np.errstate(over="ignore", invalid="ignore"):
        acts, enc_caches = _encode(P, cfg, xb, keep)
        state, kls, dec_caches, _ = _decode(P, cfg, B, eps, acts, keep=keep)
        mean, s3 = _output(P, cfg, state)
        lv, m_out = _clamp(P["out.logvar"])
        resid = xb - mean
        recon_b = -0.5 * np.sum(LOG2PI + lv + resid * resid * np.exp(-lv), axis=1)
    kl_b = np.stack(kls)
    recon = float(recon_b.mean())
    kl = kl_b.mean(axis=1)
    elbo = recon - float(kl.sum())
    finite = bool(np.isfinite(elbo) and np.all(np.isfinite(state)))
    out = ElboBreakdown(recon, kl, elbo, recon_b, kl_b, cfg.pixels, finite)
    cache = None
    if keep:
        cache = dict(xb=xb, acts=acts, enc=enc_caches, dec=dec_caches, s3=s3, resid=resid, lv=lv, m_out=m_out)
    return out, cache


def backward(params, cache, layer_weights=None):
    """Gradients of the per-dimension loss ``mean_b(-recon_b + sum_l w_l kl_lb) / pixels``."""
    P, cfg = params.arrays, params.config
    G = params.zeros_like()
    c, R, A, Z = cfg.channels, cfg.resolutions, cfg.applications, cfg.latent_channels
    xb = cache["xb"]
    B = len(xb)
    s = 1.0 / (B * cfg.pixels)
    w = np.ones(cfg.n_layers) if layer_weights is None else np.asarray(layer_weights, dtype=np.float64)

    # likelihood
    lv, resid = cache["lv"], cache["resid"]
    inv = np.exp(-lv)
    dmean = -s * resid * inv
    G["out.logvar"] += np.where(cache["m_out"], s * 0.5 * np.sum(1.0 - resid * resid * inv, axis=0), 0.0)
    s3 = cache["s3"]
    G["out.w"] += np.einsum("bp,bpc->c", dmean, s3)
    G["out.b"] += dmean.sum()
    dstate = (dmean[:, :, None] * P["out.w"]).reshape(B, -1)

    d_acts = [[np.zeros_like(h) for h in row] for row in cache["acts"]]
    layer = cfg.n_layers
    for rec in reversed(cache["dec"]):
        layer -= 1
        i, a, pre, D = rec["i"], rec["a"], rec["pre"], rec["D"]
        x1 = rec["x1"]
        # state_out = x1 + mlp_r(x1)
        dr = _mlp_back(P, G, pre + "r.", rec["rc"], dstate)
        dx1 = dstate + _site_back(cfg, "block", x1, dr)
        if cfg.normalize_state:
            dx1 = _normalize_back(x1, rec["n1"], dx1)
        dzp = dx1
        G[pre + "z.w"] += dzp.T @ rec["zin"]
        G[pre + "z.b"] += dzp.sum(axis=0)
        dz = _site_back(cfg, "latent", rec["z"], dzp @ P[pre + "z.w"])
        kmq, klq, kmp, klp = _kl_grads(rec["mu_q"], rec["lv_q"], rec["mu_p"], rec["lv_p"])
        sk = s * w[layer]
        d_mu_q = dz + sk * kmq
        d_lv_q = (dz * 0.5 * rec["sd"] * rec["e"] + sk * klq) * rec["mq"]
        d_mu_p = sk * kmp
        d_lv_p = sk * klp * rec["mp"]
        dq = _mlp_back(P, G, pre + "q.", rec["qc"], np.concatenate([d_mu_q, d_lv_q], axis=1))
        dqraw = _site_back(cfg, "heads", rec["qraw"], dq)
        d_acts[i][_skip_index(cfg, a)] += dqraw[:, D:]
        dxpp = dx1 if cfg.residual_cell else np.zeros_like(dx1)
        dp = _mlp_back(P, G, pre + "p.", rec["pc"], np.concatenate([d_mu_p, d_lv_p, dxpp], axis=1))
        dstate = dqraw[:, :D] + _site_back(cfg, "heads", rec["state"], dp)
        if cfg.residual_cell:
            dstate = dstate + dx1
        if a == 0 and i < len(R) - 1:
            dstate = _embed_back(dstate, R[i + 1], R[i], c)

    # encoder
    dh = None
    for i, a, h, mc, hn, nrm in reversed(cache["enc"]):
        if a == A - 1:
            if dh is not None:
                dh = _pool_back(dh, R[i], R[i + 1], c)
            else:
                dh = np.zeros_like(hn)
        dh = dh + d_acts[i][a]
        if cfg.normalize_state:
            dh = _normalize_back(hn, nrm, dh)
        du = _mlp_back(P, G, f"enc{i}.{a // cfg.repeats}.", mc, dh)
        dh = dh + _site_back(cfg, "block", h, du)
    dh3 = dh.reshape(B, cfg.pixels, c)
    G["in.w"] += np.einsum("bpc,bp->c", dh3, xb)
    G["in.b"] += dh3.sum(axis=(0, 1))
    return G


def loss_value(elbo_breakdown):
    """Per-dimension training loss matching :func:`backward` with unit layer weights."""
    return -elbo_breakdown.elbo / elbo_breakdown.dims


def forward_backward(params, x, seed=0, stream=0):
    """Returns ``(ElboBreakdown, gradients)`` of the per-dimension negative ELBO."""
    out, cache = forward(params, x, seed, keep=True, stream=stream)
    return out, backward(params, cache)


def grad(params, x, seed=0, stream=0):
    return forward_backward(params, x, seed, stream)[1]


def grad_norm(grads):
    flat = getattr(grads, "flat", None)
    if flat is not None:
        return float(np.sqrt(flat @ flat))
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


# -- evaluation helpers ----------------------------------------------------


def elbo_mc_timesteps(params, x, l_samples, seed=0, layer_seed=0, layers=None):
    """``recon - L * mean_{l in S} KL_l`` with ``S`` drawn uniformly (with replacement).

    All latent layers are still sampled so conditioning is unchanged; only
    the KL sum is estimated.  ``layers`` fixes ``S`` explicitly.
    """
    L = params.config.n_layers
    if layers is None:
        if not 1 <= l_samples <= L:
            raise HvaeError(f"l_samples must lie in [1, {L}]")
        layers = np.random.default_rng(layer_seed).integers(0, L, size=l_samples)
    out, _ = forward(params, x, seed)
    layers = np.asarray(layers)
    return out.recon - L * float(np.mean(out.kl_per_layer[layers]))


def boundary_kl(params, x):
    """Batch-mean KL between the top posterior and the top prior.

    Computed directly from the encoder output and the two heads evaluated at
    the zero decoder input; no latent sampling is involved.
    """
    P, cfg = params.arrays, params.config
    xb = _prepare(cfg, x)
    acts, _ = _encode(P, cfg, xb, keep=False)
    top = len(cfg.resolutions) - 1
    Z = cfg.latent_channels
    zero = np.zeros((len(xb), cfg.state_dim(top)))
    pre = f"dec{top}.0."
    po, _ = _mlp(P, pre + "p.", _site(cfg, "heads", zero))
    qraw = np.concatenate([zero, acts[top][_skip_index(cfg, 0)]], axis=1)
    qo, _ = _mlp(P, pre + "q.", _site(cfg, "heads", qraw))
    lq, _ = _clamp(qo[:, Z:])
    lp, _ = _clamp(po[:, Z : 2 * Z])
    return float(np.mean(gaussian_kl(qo[:, :Z], lq, po[:, :Z], lp, axis=1)))


def kl_cumsum(params, x, seed=0):
    out, _ = forward(params, x, seed)
    return np.cumsum(np.maximum(out.kl_per_layer, 0.0))


def collapsed_fraction(kl_per_layer, threshold=0.01):
    """Fraction of layers whose KL is below ``threshold`` times the total KL (flat cumsum steps)."""
    kl = np.maximum(np.asarray(kl_per_layer, dtype=np.float64), 0.0)
    total = kl.sum()
    if total <= 0:
        return 1.0
    return float(np.mean(kl < threshold * total))


def sample(params, temperature, n, seed=0):
    """Prior samples (likelihood means) with prior standard deviations scaled by ``temperature``."""
    if temperature < 0:
        raise HvaeError("temperature must be non-negative")
    cfg = params.config
    eps = layer_noise(seed, n, cfg)
    state, _, _, _ = _decode(params.arrays, cfg, n, eps, None, temperature)
    mean, _ = _output(params.arrays, cfg, state)
    return mean.reshape(n, cfg.image_size, cfg.image_size)


def residual_norm_probe(params, batches, seed=0):
    """Mean and std of the residual-state norm per block, over all images in ``batches``.

    Forward series: encoder block outputs.  Backward series: decoder state
    entering each cell's residual block.
    """
    cfg = params.config
    if not cfg.residual_cell:
        raise UnsupportedError("norm probes need residual cells")
    fwd, bwd = [], []
    for j, x in enumerate(batches):
        xb = _prepare(cfg, x)
        acts, _ = _encode(params.arrays, cfg, xb, keep=False)
        fwd.append(np.stack([np.sqrt(np.sum(h * h, axis=1)) for row in acts for h in row]))
        eps = layer_noise(seed, len(xb), cfg, stream=j)
        _, _, _, norms = _decode(params.arrays, cfg, len(xb), eps, acts, probe=True)
        bwd.append(np.stack(norms))
    f, b = np.concatenate(fwd, axis=1), np.concatenate(bwd, axis=1)
    res_f = np.repeat(np.arange(len(cfg.resolutions)), cfg.applications)
    return NormProbe(f.mean(1), f.std(1), b.mean(1), b.std(1), res_f, res_f[::-1].copy())
