"""Latent diffusion over spot neighborhoods.

Only the center row of a latent block is ever noised; neighbor rows pass
through the forward process untouched and double as the conditioning signal
(center row zeroed). The denoiser is a DiT: per-row concatenation of the noisy
block and the condition block, timestep conditioning via adaLN-Zero, and an
output head that reads the center token's noise estimate. Sampling is
deterministic DDIM over a uniformly spaced sub-sequence of the training
schedule; an ancestral sampler is available behind a flag.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field

import numpy as np

from lgdist.autoencoder import (
    NeighborhoodAutoencoder,
    assemble_neighborhoods,
    panel_digest,
)
from lgdist.data import GenePanel, Slide, SplitSpec, neighborhood_batch
from lgdist.errors import (
    CheckpointError,
    ConfigError,
    NonFiniteError,
    ShapeError,
    TargetError,
)
from lgdist.nn import tensor as T
from lgdist.nn.blocks import AdaLnFinal, Dense, DiTBlock, Module, sincos_1d
from lgdist.nn.checkpoint import load_checkpoint, save_checkpoint
from lgdist.nn.optim import AdamW
from lgdist.preprocess import median_precomplete
from lgdist.rng import philox

# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


@dataclass
class DiffusionSchedule:
    train_steps: int
    alpha_bar: np.ndarray  # float64, length train_steps + 1, alpha_bar[0] = 1
    betas: np.ndarray  # float64, length train_steps + 1, betas[0] = 0 (unused)
    sampling_timesteps: tuple[int, ...]  # strictly decreasing, ends above 0

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.alpha_bar.tobytes())
        h.update(np.asarray(self.sampling_timesteps, dtype=np.int64).tobytes())
        return h.hexdigest()


def cosine_schedule(train_steps=1500, s=0.008, clip=1e-5, sampling_steps=50) -> DiffusionSchedule:
    """Cosine cumulative-signal schedule, clipped below and strictly decreasing.

    alpha_bar[t] = f(t)/f(0) with f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2).
    Clipping the floor flattens the last few entries, so those are lifted by a
    vanishing geometric factor to keep the sequence strictly decreasing.
    """
    if train_steps < 1:
        raise ConfigError("train_steps must be >= 1")
    t = np.arange(train_steps + 1, dtype=np.float64)
    f = np.cos(((t / train_steps + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    alpha_bar = f / f[0]
    alpha_bar = np.maximum(alpha_bar, clip)
    for i in range(train_steps - 1, 0, -1):
        if alpha_bar[i] <= alpha_bar[i + 1]:
            alpha_bar[i] = alpha_bar[i + 1] * (1.0 + 1e-9)
    alpha_bar[0] = 1.0
    betas = np.zeros(train_steps + 1)
    betas[1:] = np.minimum(1.0 - alpha_bar[1:] / alpha_bar[:-1], 0.999)
    steps = min(sampling_steps, train_steps)
    taus = sorted({int(round(train_steps * k / steps)) for k in range(1, steps + 1)}, reverse=True)
    return DiffusionSchedule(train_steps, alpha_bar, betas, tuple(taus))


def center_mask(n_rows: int, width: int) -> np.ndarray:
    """Binary (n_rows, width) mask: zeros on the center row, ones elsewhere."""
    m = np.ones((n_rows, width), dtype=np.uint8)
    m[0] = 0
    return m


def masked_forward(latent_block: np.ndarray, t, noise: np.ndarray, schedule: DiffusionSchedule):
    """Noise only the center row at timestep t; neighbor rows are bit-identical.

    Accepts a single (T, d) block with scalar t and (d,) noise, or batched
    (B, T, d) with (B,) t and (B, d) noise.
    """
    batched = latent_block.ndim == 3
    x = latent_block[None] if not batched else latent_block
    tt = np.atleast_1d(np.asarray(t, dtype=np.int64))
    eps = noise[None] if not batched else noise
    if np.any(tt < 0) or np.any(tt > schedule.train_steps):
        raise ConfigError(f"timestep out of range 0..{schedule.train_steps}")
    if eps.shape != (x.shape[0], x.shape[2]):
        raise ShapeError("noise must have the center-row shape")
    ab = schedule.alpha_bar[tt]
    out = x.copy()
    dtype = x.dtype.type
    center = (
        np.sqrt(ab)[:, None].astype(dtype) * x[:, 0]
        + np.sqrt(1.0 - ab)[:, None].astype(dtype) * eps.astype(dtype, copy=False)
    )
    out[:, 0] = center
    return out if batched else out[0]


# ---------------------------------------------------------------------------
# denoiser
# ---------------------------------------------------------------------------


@dataclass
class DiffusionConfig:
    layers: int = 12
    heads: int = 16
    width: int = 256
    time_embed_dim: int = 256
    dropout: float = 0.0
    token_pos_enc: bool = True
    use_latent: bool = True
    hops: int = 1
    train_steps: int = 1500
    schedule_s: float = 0.008
    schedule_clip: float = 1e-5
    sampling_steps: int = 50
    lr: float = 1e-4
    epochs: int = 1500
    batch_size: int = 128
    weight_decay: float = 0.01
    # bound on intermediate clean-row estimates during sampling, in standardized
    # latent units; None disables
    x0_clip: float | None = 10.0

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigError("heads must divide width")
        if self.time_embed_dim % 2 != 0:
            raise ConfigError("time_embed_dim must be even")
        if self.hops not in (0, 1, 2):
            raise ConfigError("hops must be 0, 1, or 2")

    def schedule(self) -> DiffusionSchedule:
        return cosine_schedule(
            self.train_steps, self.schedule_s, self.schedule_clip, self.sampling_steps
        )


class NeighborhoodDenoiser(Module):
    """DiT predicting the center row's noise from (noisy block, condition, t)."""

    def __init__(self, cfg: DiffusionConfig, token_width: int, seed: int, dtype=np.float32):
        self.cfg = cfg
        self.token_width = token_width
        self.dtype = dtype
        w = cfg.width
        self.in_proj = Dense(2 * token_width, w, philox(seed, "dit", 0), "dit.in_proj", dtype=dtype)
        self.t_fc1 = Dense(cfg.time_embed_dim, w, philox(seed, "dit", 1), "dit.t_fc1", dtype=dtype)
        self.t_fc2 = Dense(w, w, philox(seed, "dit", 2), "dit.t_fc2", dtype=dtype)
        self.blocks = [
            DiTBlock(w, w, cfg.heads, philox(seed, "dit", 10 + i), f"dit.block{i}", dtype=dtype)
            for i in range(cfg.layers)
        ]
        self.final = AdaLnFinal(w, w, token_width, philox(seed, "dit", 9), "dit.final", dtype=dtype)

    def __call__(self, noisy: np.ndarray, cond: np.ndarray, t: np.ndarray, train=False, rng=None):
        if noisy.shape != cond.shape:
            raise ShapeError("noisy block and condition block must share a shape")
        if noisy.shape[-1] != self.token_width:
            raise ShapeError(f"expected token width {self.token_width}, got {noisy.shape[-1]}")
        b, n_tok, _ = noisy.shape
        tokens = np.concatenate(
            [noisy.astype(self.dtype, copy=False), cond.astype(self.dtype, copy=False)], axis=-1
        )
        x = self.in_proj(T.Tensor(tokens))
        if self.cfg.token_pos_enc:
            x = T.add(x, T.Tensor(sincos_1d(np.arange(n_tok), self.cfg.width, dtype=self.dtype)))
        temb = sincos_1d(np.asarray(t, dtype=np.float64), self.cfg.time_embed_dim, dtype=self.dtype)
        c = self.t_fc2(T.silu(self.t_fc1(T.Tensor(temb))))
        p = self.cfg.dropout if train else 0.0
        for blk in self.blocks:
            x = blk(x, c, drop_p=p, rng=rng)
        out = self.final(x, c)  # (B, T, token_width)
        return out[:, 0]


@dataclass
class TrainedDenoiser:
    """Denoiser plus everything needed to use it: schedule and latent scaling."""

    model: NeighborhoodDenoiser
    cfg: DiffusionConfig
    latent_mean: np.ndarray  # (token_width,)
    latent_std: np.ndarray  # (token_width,)
    meta: dict = field(default_factory=dict)

    def schedule(self) -> DiffusionSchedule:
        return self.cfg.schedule()

    def normalize(self, z: np.ndarray) -> np.ndarray:
        return ((z - self.latent_mean) / self.latent_std).astype(np.float32)

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.latent_std.astype(z.dtype) + self.latent_mean.astype(z.dtype)


# ---------------------------------------------------------------------------
# latent codecs
# ---------------------------------------------------------------------------


class LatentCodec:
    """Autoencoder-backed codec between expression blocks and latent blocks."""

    def __init__(self, ae: NeighborhoodAutoencoder):
        self.ae = ae
        self.width = ae.cfg.latent_dim

    def encode_blocks(self, x: np.ndarray, coords: np.ndarray, chunk=512) -> np.ndarray:
        out = np.empty((x.shape[0], x.shape[1], self.width), dtype=np.float32)
        with T.no_grad():
            for lo in range(0, x.shape[0], chunk):
                out[lo : lo + chunk] = self.ae.encode(x[lo : lo + chunk], coords[lo : lo + chunk]).data
        return out

    def decode_rows(self, z: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self.ae.decode(z).data


class IdentityCodec:
    """No latent space: the DiT works directly on expression rows."""

    def __init__(self, gene_count: int):
        self.width = gene_count

    def encode_blocks(self, x: np.ndarray, coords: np.ndarray, chunk=512) -> np.ndarray:
        return x.astype(np.float32, copy=False)

    def decode_rows(self, z: np.ndarray) -> np.ndarray:
        return z


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _condition_blocks(z: np.ndarray) -> np.ndarray:
    cond = z.copy()
    cond[:, 0, :] = 0.0
    return cond


def train_diffusion(
    slides: dict[str, Slide],
    panel: GenePanel,
    splits: SplitSpec,
    cfg: DiffusionConfig,
    seed: int,
    ae_model: NeighborhoodAutoencoder | None = None,
    out_path=None,
    ae_digest: str = "",
    resume_from=None,
):
    """Noise-prediction training of the DiT over frozen encoded neighborhoods.

    Per batch: sample t uniform in [1, T] and unit noise for the center rows,
    form the masked forward blocks, and minimize the mean squared error between
    injected and predicted noise. Latent blocks are standardized per dimension
    with statistics from the training set. Bit-reproducible per seed.
    """
    if cfg.use_latent:
        if ae_model is None:
            raise CheckpointError("latent diffusion needs a trained autoencoder")
        if ae_model.cfg.gene_count != panel.gene_count:
            raise CheckpointError("autoencoder gene count disagrees with panel")
        codec = LatentCodec(ae_model)
    else:
        codec = IdentityCodec(panel.gene_count)

    x_train, c_train, _ = assemble_neighborhoods(slides, panel, splits.train, cfg.hops)
    x_val, c_val, _ = assemble_neighborhoods(slides, panel, splits.val, cfg.hops)
    if x_train.shape[0] == 0:
        raise ConfigError("no training neighborhoods")
    z_train = codec.encode_blocks(x_train, c_train)
    rows = z_train.reshape(-1, codec.width).astype(np.float64)
    mu = rows.mean(axis=0)
    sd = np.maximum(rows.std(axis=0), 1e-6)
    z_train = ((z_train - mu) / sd).astype(np.float32)
    if x_val.shape[0]:
        z_val = ((codec.encode_blocks(x_val, c_val) - mu) / sd).astype(np.float32)
    else:
        z_val = np.zeros((0, z_train.shape[1], codec.width), dtype=np.float32)

    schedule = cfg.schedule()
    model = NeighborhoodDenoiser(cfg, codec.width, seed)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)

    start_epoch = 0
    best_val = np.inf
    best_epoch = -1
    best = {p.name: p.data.copy() for p in params}
    if resume_from is not None:
        header, tensors = load_checkpoint(resume_from)
        if header["kind"] != "denoiser":
            raise CheckpointError(f"expected a denoiser checkpoint, got {header['kind']!r}")
        for p in params:
            p.data = tensors[f"last.{p.name}"].copy()
        opt.load_state_tensors(tensors, header["meta"]["opt_step"])
        start_epoch = int(header["meta"]["epochs_run"])
        best_val = float(header["meta"]["best_val"])
        best_epoch = int(header["meta"]["best_epoch"])
        best = {p.name: tensors[f"param.{p.name}"].copy() for p in params}
        mu = tensors["latent_mean"].copy()
        sd = tensors["latent_std"].copy()

    # fixed validation noise so the val loss is comparable across epochs
    n_val = z_val.shape[0]
    t_val = philox(seed, "val_t").integers(1, schedule.train_steps + 1, size=n_val)
    eps_val = philox(seed, "val_eps").standard_normal((n_val, codec.width)).astype(np.float32)

    n = z_train.shape[0]
    step = start_epoch * ((n + cfg.batch_size - 1) // cfg.batch_size)
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        perm = philox(seed, "shuffle", epoch).permutation(n)
        loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            zb = z_train[idx]
            rng = philox(seed, "noise", step)
            tb = rng.integers(1, schedule.train_steps + 1, size=len(idx))
            eps = rng.standard_normal((len(idx), codec.width)).astype(np.float32)
            noisy = masked_forward(zb, tb, eps, schedule)
            cond = _condition_blocks(zb)
            drop_rng = philox(seed, "dropout", step) if cfg.dropout > 0 else None
            pred = model(noisy, cond, tb, train=True, rng=drop_rng)
            loss = T.mse(pred, eps)
            if not np.isfinite(loss.data):
                raise NonFiniteError(f"non-finite diffusion loss in epoch {epoch}, batch at {lo}")
            model.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item() * len(idx)
            step += 1
        train_loss = loss_sum / n

        val_loss = evaluate_denoiser(model, z_val, t_val, eps_val, schedule, chunk=cfg.batch_size)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        select = train_loss if np.isnan(val_loss) else val_loss
        if select < best_val:
            best_val = select
            best_epoch = epoch
            best = {p.name: p.data.copy() for p in params}

    meta = {
        "seed": seed,
        "epochs_run": cfg.epochs,
        "best_epoch": best_epoch,
        "best_val": float(best_val),
        "opt_step": opt.step_count,
        "token_width": codec.width,
        "gene_count": panel.gene_count,
        "hsag_count": panel.hsag_count,
        "panel_digest": panel_digest(panel),
        "ae_digest": ae_digest,
        "schedule_digest": schedule.digest(),
    }
    tensors = {}
    for p in params:
        tensors[f"param.{p.name}"] = best[p.name]
        tensors[f"last.{p.name}"] = p.data
    tensors["latent_mean"] = mu
    tensors["latent_std"] = sd
    tensors.update(opt.state_tensors())
    if out_path is not None:
        save_checkpoint(out_path, "denoiser", asdict(cfg), tensors, meta=meta)
    for p in params:
        p.data = best[p.name].copy()
    return TrainedDenoiser(model, cfg, mu, sd, meta), history


def evaluate_denoiser(model, z_val, t_val, eps_val, schedule, chunk=256):
    n = z_val.shape[0]
    if n == 0:
        return np.nan
    total = 0.0
    with T.no_grad():
        for lo in range(0, n, chunk):
            zb = z_val[lo : lo + chunk]
            tb = t_val[lo : lo + chunk]
            eb = eps_val[lo : lo + chunk]
            noisy = masked_forward(zb, tb, eb, schedule)
            pred = model(noisy, _condition_blocks(zb), tb)
            total += T.mse(pred, eb).item() * zb.shape[0]
    return total / n


def load_denoiser(path) -> TrainedDenoiser:
    header, tensors = load_checkpoint(path)
    if header["kind"] != "denoiser":
        raise CheckpointError(f"expected a denoiser checkpoint, got {header['kind']!r}")
    cfg = DiffusionConfig(**header["config"])
    meta = header["meta"]
    model = NeighborhoodDenoiser(cfg, int(meta["token_width"]), seed=int(meta["seed"]))
    for p in model.parameters():
        key = f"param.{p.name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {key!r}")
        p.data = tensors[key].copy()
    return TrainedDenoiser(model, cfg, tensors["latent_mean"], tensors["latent_std"], meta)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_center(
    denoise_fn,
    neighbor_blocks: np.ndarray,
    schedule: DiffusionSchedule,
    seed: int,
    spot_keys,
    init_center: np.ndarray | None = None,
    timesteps=None,
    method: str = "ddim",
    x0_clip: float | None = None,
):
    """Generate center rows conditioned on fixed neighbor rows.

    neighbor_blocks is (B, T, w); its center row is ignored. The initial center
    rows are standard normal draws keyed per spot, so results are independent
    of batch composition. With method="ddim" the trajectory is deterministic
    after initialization; "ancestral" re-noises at every step from keyed
    streams. Returns (B, w) center rows at t=0.

    x0_clip bounds the intermediate clean-row estimates. Near the clipped end
    of the schedule 1/sqrt(alpha_bar) is ~300, so an un-bounded first step
    amplifies model error catastrophically; clipping is a no-op whenever the
    true row lies within the bound.
    """
    if method not in ("ddim", "ancestral"):
        raise ConfigError(f"unknown sampling method {method!r}")
    b, _, w = neighbor_blocks.shape
    # sampler arithmetic runs at 64-bit so x0 recovery stays exact even at the
    # clipped end of the schedule where 1/sqrt(alpha_bar) is large
    cond = _condition_blocks(neighbor_blocks).astype(np.float64)
    if init_center is None:
        x = np.empty((b, w), dtype=np.float64)
        for i, key in enumerate(spot_keys):
            x[i] = philox(seed, "init", *key).standard_normal(w)
    else:
        x = init_center.astype(np.float64).copy()
    taus = list(schedule.sampling_timesteps if timesteps is None else timesteps)
    ab = schedule.alpha_bar
    for i, t in enumerate(taus):
        t_next = taus[i + 1] if i + 1 < len(taus) else 0
        noisy = cond.copy()
        noisy[:, 0, :] = x
        tb = np.full(b, t, dtype=np.int64)
        eps_hat = denoise_fn(noisy, cond, tb)
        eps_hat = eps_hat.data if isinstance(eps_hat, T.Tensor) else np.asarray(eps_hat)
        eps_hat = eps_hat.astype(np.float64)
        ab_t, ab_s = float(ab[t]), float(ab[t_next])
        x0 = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        if x0_clip is not None:
            x0 = np.clip(x0, -x0_clip, x0_clip)
        if method == "ddim":
            x = np.sqrt(ab_s) * x0 + np.sqrt(1.0 - ab_s) * eps_hat
        else:
            # ancestral step toward t_next using the posterior mean plus noise
            beta_eff = 1.0 - ab_t / ab_s if ab_s > 0 else 0.0
            mean = (
                np.sqrt(ab_s) * beta_eff / (1.0 - ab_t) * x0
                + (1.0 - ab_s) * np.sqrt(ab_t / ab_s) / (1.0 - ab_t) * x
            )
            if t_next > 0:
                sigma = np.sqrt(beta_eff * (1.0 - ab_s) / (1.0 - ab_t))
                for j, key in enumerate(spot_keys):
                    mean[j] += sigma * philox(seed, "anc", t, *key).standard_normal(w)
            x = mean
    return x


# ---------------------------------------------------------------------------
# end-to-end completion
# ---------------------------------------------------------------------------


@dataclass
class CompletionResult:
    expression: np.ndarray  # (S, hsag_count) by default, (S, G) with keep_cgs
    gene_names: tuple[str, ...]
    filled_entries: np.ndarray  # (k, 2) spot, panel gene index
    full_expression: np.ndarray  # (S, G) spliced matrix regardless of filtering


def complete_slide(
    slide: Slide,
    panel: GenePanel,
    denoiser: TrainedDenoiser,
    ae_model: NeighborhoodAutoencoder | None,
    target_entries: np.ndarray,
    seed: int = 0,
    keep_cgs: bool = False,
    method: str = "ddim",
    chunk: int = 512,
) -> CompletionResult:
    """Fill the target entries by generating each affected spot's center row.

    The slide's precompleted expression provides neighbor context (computed
    here when absent); generated values are spliced into the raw expression
    only at the target entries, so every other entry is bit-identical to the
    input. Output columns are restricted to HSAGs unless keep_cgs is set.
    """
    g = panel.gene_count
    if slide.n_genes != g:
        raise ShapeError("slide genes do not match the panel")
    entries = np.asarray(target_entries, dtype=np.int64).reshape(-1, 2)
    if entries.shape[0]:
        if entries[:, 0].min() < 0 or entries[:, 0].max() >= slide.n_spots:
            raise TargetError("target spot index out of bounds")
        if entries[:, 1].min() < 0 or entries[:, 1].max() >= g:
            raise TargetError("target gene not in panel")
    if denoiser.meta.get("panel_digest") and denoiser.meta["panel_digest"] != panel_digest(panel):
        raise CheckpointError("denoiser was trained on a different gene panel")
    if denoiser.cfg.use_latent:
        if ae_model is None:
            raise CheckpointError("latent-space denoiser needs the autoencoder checkpoint")
        if ae_model.cfg.latent_dim != denoiser.model.token_width:
            raise CheckpointError("autoencoder latent width does not match the denoiser")
        codec = LatentCodec(ae_model)
    else:
        codec = IdentityCodec(g)

    out = slide.expression.copy()
    if entries.shape[0]:
        context = slide
        if context.precompleted is None and (context.observed_mask == 0).any():
            context = median_precomplete(slide)
        spots = np.unique(entries[:, 0])
        schedule = denoiser.schedule()
        generated: dict[int, np.ndarray] = {}
        for lo in range(0, len(spots), chunk):
            batch_spots = spots[lo : lo + chunk]
            x, coords, _ = neighborhood_batch(context, batch_spots, panel, denoiser.cfg.hops)
            z = denoiser.normalize(codec.encode_blocks(x, coords))
            keys = [(slide.slide_id, int(s)) for s in batch_spots]

            def denoise_fn(noisy, cond, tb):
                return denoiser.model(noisy, cond, tb)

            with T.no_grad():
                z0 = sample_center(
                    denoise_fn, z, schedule, seed, keys, method=method,
                    x0_clip=denoiser.cfg.x0_clip,
                )
                rows = codec.decode_rows(denoiser.denormalize(z0).astype(np.float32))
            for i, s in enumerate(batch_spots):
                generated[int(s)] = rows[i]
        for s, k in entries:
            out[s, k] = generated[int(s)][k]

    h = panel.hsag_count
    if keep_cgs:
        return CompletionResult(out, panel.gene_names, entries, out)
    return CompletionResult(out[:, :h].copy(), panel.gene_names[:h], entries, out)
