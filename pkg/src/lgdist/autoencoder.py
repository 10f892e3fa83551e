"""Neighborhood autoencoder: transformer encoder to a compact latent space,
row-wise MLP decoder, and the HSAG-weighted reconstruction loss.

The encoder input is the neighborhood block with 2D sinusoidal positional
encodings of each row's array coordinates added directly to the expression
values (the encoding dimension therefore equals the gene count). The decoder
maps latent rows back to expression independently per row, so a single
generated row can be decoded on its own.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from lgdist.data import GenePanel, Slide, SplitSpec, neighborhood_batch
from lgdist.errors import CheckpointError, ConfigError, NonFiniteError, ShapeError
from lgdist.nn import tensor as T
from lgdist.nn.blocks import Dense, LayerNorm, Module, TransformerLayer, dropout, sincos_2d
from lgdist.nn.checkpoint import load_checkpoint, save_checkpoint
from lgdist.nn.optim import AdamW
from lgdist.rng import philox


@dataclass
class AutoencoderConfig:
    gene_count: int
    latent_dim: int = 128
    encoder_layers: int = 4
    encoder_heads: int = 1
    decoder_hidden_mult: int = 4
    dropout: float = 0.1
    alpha: float = 0.7  # weight of the HSAG columns in the reconstruction loss
    noise_prob: float = 0.5
    noise_std: float = 0.1
    lr: float = 1e-6
    epochs: int = 5000
    batch_size: int = 128
    weight_decay: float = 0.01
    hops: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.gene_count % 4 != 0:
            raise ConfigError("gene_count must be divisible by 4 for 2D positional encodings")
        for field_name in ("latent_dim", "encoder_layers", "encoder_heads", "epochs", "batch_size"):
            if getattr(self, field_name) <= 0:
                raise ConfigError(f"{field_name} must be positive")
        if self.lr <= 0 or self.noise_std < 0:
            raise ConfigError("lr must be positive and noise_std non-negative")
        if self.hops not in (0, 1, 2):
            raise ConfigError("hops must be 0, 1, or 2")


class NeighborhoodAutoencoder(Module):
    def __init__(self, cfg: AutoencoderConfig, seed: int, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        g, d = cfg.gene_count, cfg.latent_dim
        self.embed = Dense(g, d, philox(seed, "init", 0), "enc.embed", dtype=dtype)
        self.layers = [
            TransformerLayer(
                d, cfg.encoder_heads, philox(seed, "init", 1 + i), f"enc.layer{i}",
                activation="tanh", dtype=dtype,
            )
            for i in range(cfg.encoder_layers)
        ]
        self.final_ln = LayerNorm(d, "enc.final_ln", dtype=dtype)
        hidden = d * cfg.decoder_hidden_mult
        self.dec_fc1 = Dense(d, hidden, philox(seed, "init", 101), "dec.fc1", dtype=dtype)
        self.dec_fc2 = Dense(hidden, g, philox(seed, "init", 102), "dec.fc2", dtype=dtype)

    def positional(self, coords: np.ndarray) -> np.ndarray:
        return sincos_2d(coords[..., 0], coords[..., 1], self.cfg.gene_count, dtype=self.dtype)

    def encode(self, x: np.ndarray, coords: np.ndarray, train=False, rng=None, extra_noise=None):
        """(B, T, g) block plus per-row coordinates -> (B, T, d) latent tokens."""
        if x.shape[-1] != self.cfg.gene_count:
            raise ShapeError(f"expected {self.cfg.gene_count} genes, got {x.shape[-1]}")
        xp = x.astype(self.dtype, copy=False) + self.positional(coords)
        if extra_noise is not None:
            xp = xp + extra_noise.astype(self.dtype, copy=False)
        h = self.embed(T.Tensor(xp))
        p = self.cfg.dropout if train else 0.0
        for layer in self.layers:
            h = layer(h, drop_p=p, rng=rng)
        return self.final_ln(h)

    def decode(self, z, train=False, rng=None):
        """Row-wise decode of latent rows (any leading shape) back to genes."""
        h = T.tanh(self.dec_fc1(z if isinstance(z, T.Tensor) else T.Tensor(z)))
        h = dropout(h, self.cfg.dropout if train else 0.0, rng)
        return self.dec_fc2(h)

    def reconstruct(self, x, coords, train=False, rng=None, extra_noise=None):
        return self.decode(self.encode(x, coords, train, rng, extra_noise), train, rng)


def encode_neighborhood(model: NeighborhoodAutoencoder, nbhd) -> np.ndarray:
    """Eval-mode latent block (n+1, d) for a single neighborhood."""
    with T.no_grad():
        z = model.encode(nbhd.expression[None], nbhd.coords[None])
    return z.data[0]


def weighted_reconstruction_loss(target: np.ndarray, predicted, hsag_count: int, alpha: float):
    """alpha-blend of the MSE over HSAG columns and the MSE over CG columns.

    Returns (loss, hsag_term, cg_term) as graph nodes. Panels without context
    genes fall back to the HSAG term alone.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    pred = predicted if isinstance(predicted, T.Tensor) else T.Tensor(predicted)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    g = target.shape[-1]
    if not 0 < hsag_count <= g:
        raise ShapeError(f"hsag_count {hsag_count} outside 1..{g}")
    l_hsag = T.mse(pred[..., :hsag_count], target[..., :hsag_count])
    if hsag_count == g:
        return l_hsag, l_hsag, T.Tensor(np.zeros((), dtype=np.float64))
    l_cg = T.mse(pred[..., hsag_count:], target[..., hsag_count:])
    loss = T.add(T.mul(l_hsag, float(alpha)), T.mul(l_cg, float(1.0 - alpha)))
    return loss, l_hsag, l_cg


def assemble_neighborhoods(slides: dict[str, Slide], panel: GenePanel, slide_ids, hops: int):
    """Stacked (N,T,g) blocks, (N,T,2) coords, and (N,T) validity over whole slides."""
    xs, cs, vs = [], [], []
    for sid in slide_ids:
        slide = slides[sid]
        x, coords, valid = neighborhood_batch(slide, range(slide.n_spots), panel, hops)
        xs.append(x)
        cs.append(coords)
        vs.append(valid)
    if not xs:
        return (
            np.zeros((0, 1, panel.gene_count), np.float32),
            np.zeros((0, 1, 2), np.int32),
            np.zeros((0, 1), np.uint8),
        )
    return np.concatenate(xs), np.concatenate(cs), np.concatenate(vs)


def _require_precompleted(slides, slide_ids):
    for sid in slide_ids:
        slide = slides[sid]
        if slide.precompleted is None and (slide.observed_mask == 0).any():
            raise ConfigError(
                f"slide {sid!r} has dropout but no precompleted expression; run preprocess first"
            )


def train_autoencoder(
    slides: dict[str, Slide],
    panel: GenePanel,
    splits: SplitSpec,
    cfg: AutoencoderConfig,
    seed: int,
    out_path=None,
    resume_from=None,
):
    """Train on shuffled neighborhood batches; keep the best-val parameters.

    Bit-reproducible given (cfg, seed): every random draw is keyed by the seed
    plus the epoch or global step. Returns (model, history rows).
    """
    if panel.gene_count != cfg.gene_count:
        raise ConfigError("panel gene count disagrees with config")
    _require_precompleted(slides, list(splits.train) + list(splits.val))
    x_train, c_train, _ = assemble_neighborhoods(slides, panel, splits.train, cfg.hops)
    x_val, c_val, _ = assemble_neighborhoods(slides, panel, splits.val, cfg.hops)
    if x_train.shape[0] == 0:
        raise ConfigError("no training neighborhoods")

    model = NeighborhoodAutoencoder(cfg, seed)
    params = model.parameters()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    h = panel.hsag_count
    start_epoch = 0
    best_val = np.inf
    best_epoch = -1
    best = {p.name: p.data.copy() for p in params}
    if resume_from is not None:
        header, tensors = load_checkpoint(resume_from)
        if header["kind"] != "autoencoder":
            raise CheckpointError(f"expected an autoencoder checkpoint, got {header['kind']!r}")
        for p in params:
            p.data = tensors[f"last.{p.name}"].copy()
        opt.load_state_tensors(tensors, header["meta"]["opt_step"])
        start_epoch = int(header["meta"]["epochs_run"])
        best_val = float(header["meta"]["best_val"])
        best_epoch = int(header["meta"]["best_epoch"])
        best = {p.name: tensors[f"param.{p.name}"].copy() for p in params}

    n = x_train.shape[0]
    step = start_epoch * ((n + cfg.batch_size - 1) // cfg.batch_size)
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        perm = philox(seed, "shuffle", epoch).permutation(n)
        train_loss_sum = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo : lo + cfg.batch_size]
            xb, cb = x_train[idx], c_train[idx]
            noise_rng = philox(seed, "noise", step)
            triggered = noise_rng.random(len(idx)) < cfg.noise_prob
            extra = None
            if triggered.any() and cfg.noise_std > 0:
                extra = np.zeros_like(xb)
                extra[triggered] = (
                    noise_rng.normal(0.0, cfg.noise_std, size=(int(triggered.sum()),) + xb.shape[1:])
                ).astype(xb.dtype)
            drop_rng = philox(seed, "dropout", step)
            pred = model.reconstruct(xb, cb, train=True, rng=drop_rng, extra_noise=extra)
            loss, _, _ = weighted_reconstruction_loss(xb, pred, h, cfg.alpha)
            if not np.isfinite(loss.data):
                raise NonFiniteError(f"non-finite training loss in epoch {epoch}, batch at {lo}")
            model.zero_grad()
            loss.backward()
            opt.step()
            train_loss_sum += loss.item() * len(idx)
            step += 1
        train_loss = train_loss_sum / n

        val_loss, val_h, val_c = evaluate_reconstruction(
            model, x_val, c_val, h, cfg.alpha, chunk=cfg.batch_size
        )
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_loss": val_loss,
                "l_hsag": val_h,
                "l_cg": val_c,
            }
        )
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
        "hsag_count": h,
        "panel_digest": panel_digest(panel),
    }
    tensors: dict[str, np.ndarray] = {}
    for p in params:
        tensors[f"param.{p.name}"] = best[p.name]
        tensors[f"last.{p.name}"] = p.data
    tensors.update(opt.state_tensors())
    if out_path is not None:
        save_checkpoint(out_path, "autoencoder", asdict(cfg), tensors, meta=meta)
    # leave the model holding the best-val parameters
    for p in params:
        p.data = best[p.name].copy()
    return model, history


def evaluate_reconstruction(model, x, coords, hsag_count, alpha, chunk=256):
    """Eval-mode weighted loss over a neighborhood set; nan when the set is empty."""
    n = x.shape[0]
    if n == 0:
        return np.nan, np.nan, np.nan
    sums = np.zeros(3)
    with T.no_grad():
        for lo in range(0, n, chunk):
            xb, cb = x[lo : lo + chunk], coords[lo : lo + chunk]
            pred = model.reconstruct(xb, cb, train=False)
            loss, l_h, l_c = weighted_reconstruction_loss(xb, pred, hsag_count, alpha)
            sums += np.array([loss.item(), l_h.item(), l_c.item()]) * xb.shape[0]
    return tuple(sums / n)


def panel_digest(panel: GenePanel) -> str:
    import hashlib

    h = hashlib.sha256()
    for name in panel.gene_names:
        h.update(name.encode())
        h.update(b"\x00")
    h.update(bytes([int(x) for x in panel.is_hsag]))
    return h.hexdigest()


def load_autoencoder(path) -> tuple[NeighborhoodAutoencoder, dict]:
    """Rebuild a trained model (best-val parameters) from a checkpoint."""
    header, tensors = load_checkpoint(path)
    if header["kind"] != "autoencoder":
        raise CheckpointError(f"expected an autoencoder checkpoint, got {header['kind']!r}")
    cfg = AutoencoderConfig(**header["config"])
    model = NeighborhoodAutoencoder(cfg, seed=int(header["meta"]["seed"]))
    for p in model.parameters():
        key = f"param.{p.name}"
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing tensor {key!r}")
        if tuple(tensors[key].shape) != tuple(p.data.shape):
            raise CheckpointError(f"tensor {key!r} has shape {tensors[key].shape}, expected {p.data.shape}")
        p.data = tensors[key].copy()
    return model, header["meta"]
