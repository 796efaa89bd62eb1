"""Training and sampling of the conditional density diffusion model."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from ..nn import inference
from ..numerics import Adam, Tensor, abs_, backward, grad_norm, mean, mul
from ..rng import stream
from .schedule import VarianceSchedule, make_schedule, reverse_chain
from .unet import DenoiseNet

log = logging.getLogger(__name__)

FUSIONS = ("concat", "attention")


@dataclass
class TrainConfig:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.2
    widths: tuple = (16, 32, 64)
    fusion: str = "attention"
    steps: int = 2000
    lr: float = 1e-3
    batch_size: int = 4
    masked_loss: bool = True
    seed: int = 0


@dataclass
class Sample:
    """One training pair: conditioning (C, H, W), density (H, W), forest flags (H, W)."""
    cond: np.ndarray
    density: np.ndarray
    mask: np.ndarray


@dataclass
class IidmModel:
    net: DenoiseNet
    sched: VarianceSchedule
    dmax: float
    schedule_args: tuple = field(default=(50, 1e-4, 0.2))

    def to_unit(self, d):
        return 2.0 * np.asarray(d, dtype=np.float64) / self.dmax - 1.0

    def from_unit(self, y):
        return (np.asarray(y, dtype=np.float64) + 1.0) * 0.5 * self.dmax

    def to_blobs(self):
        blobs = {f"net/{k}": v for k, v in self.net.state_dict().items()}
        blobs["meta/widths"] = np.array(self.net.widths, dtype=np.float64)
        blobs["meta/c_cond"] = np.array([self.net.c_cond], dtype=np.float64)
        blobs["meta/fusion"] = np.array([FUSIONS.index(self.net.fusion)], dtype=np.float64)
        blobs["meta/schedule"] = np.array(self.schedule_args, dtype=np.float64)
        blobs["meta/dmax"] = np.array([self.dmax], dtype=np.float64)
        return blobs

    @classmethod
    def from_blobs(cls, blobs):
        try:
            widths = tuple(int(w) for w in blobs["meta/widths"])
            c_cond = int(blobs["meta/c_cond"][0])
            fusion = FUSIONS[int(blobs["meta/fusion"][0])]
            T, bs, be = (float(v) for v in blobs["meta/schedule"])
            dmax = float(blobs["meta/dmax"][0])
        except KeyError as exc:
            raise ValueError(f"checkpoint lacks diffusion metadata {exc}") from None
        net = DenoiseNet(c_cond, stream(0, "iidm/skeleton"), widths, fusion)
        net.load_state_dict({k[4:]: v for k, v in blobs.items() if k.startswith("net/")})
        return cls(net, make_schedule(int(T), bs, be), dmax, (int(T), bs, be))


def masked_l1(pred, target, weights=None):
    """Mean |pred - target|; with ``weights`` the mean runs over weighted pixels only."""
    pred = pred if isinstance(pred, Tensor) else Tensor(pred)
    if pred.shape != np.shape(target):
        raise ValueError(f"l1 shape mismatch: {pred.shape} vs {np.shape(target)}")
    diff = abs_(pred - Tensor(target))
    if weights is None:
        return mean(diff)
    w = np.broadcast_to(weights, pred.shape)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights select no pixels")
    return mean(mul(diff, Tensor(w * (w.size / total))))


def train_iidm(samples, cfg: TrainConfig, loss_csv=None):
    """Fit the noise predictor with an L1 objective; returns (model, losses).

    The returned model has been round-tripped through its checkpoint blobs, so
    it is exactly what a later ``load`` would give.
    """
    if not samples:
        raise ValueError("train_iidm needs at least one sample")
    shapes = {s.cond.shape for s in samples}
    if len(shapes) != 1:
        raise ValueError(f"all samples need one conditioning shape, got {sorted(shapes)}")
    if not all(np.isfinite(s.cond).all() and np.isfinite(s.density).all() for s in samples):
        raise ValueError("training samples contain non-finite values")
    c_cond, h, w = samples[0].cond.shape
    sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    dmax = max(float(np.max(s.density)) for s in samples)
    if not dmax > 0:
        raise ValueError("training densities are all zero")
    net = DenoiseNet(c_cond, stream(cfg.seed, "iidm/init"), cfg.widths, cfg.fusion)
    model = IidmModel(net, sched, dmax, (cfg.T, cfg.beta_start, cfg.beta_end))

    conds = np.stack([s.cond for s in samples])
    y0_all = np.stack([model.to_unit(s.density) for s in samples])[:, None]
    masks = np.stack([s.mask for s in samples]).astype(np.float64)[:, None]
    if cfg.masked_loss and np.any(masks.reshape(len(samples), -1).sum(1) == 0):
        raise ValueError("masked loss requested but a sample has no forest pixels")

    rng = stream(cfg.seed, "iidm/batches")
    opt = Adam(net.parameters(), lr=cfg.lr)
    params = net.parameters()
    losses = []
    bsz = cfg.batch_size
    for step in range(1, cfg.steps + 1):
        idx = np.sort(rng.choice(len(samples), size=bsz, replace=len(samples) < bsz))
        t = rng.integers(1, sched.T + 1, size=bsz)
        noise = rng.standard_normal((bsz, 1, h, w))
        ab = sched.alpha_bars[t - 1][:, None, None, None]
        y_t = np.sqrt(ab) * y0_all[idx] + np.sqrt(1.0 - ab) * noise
        eps = net(y_t, t, conds[idx])
        loss = masked_l1(eps, noise, masks[idx] if cfg.masked_loss else None)
        backward(loss)
        value = loss.item()
        if not np.isfinite(value):
            gn = grad_norm(params)
            raise FloatingPointError(f"non-finite loss at step {step} (lr={cfg.lr:g}, grad-norm={gn:.4g})")
        opt.step()
        losses.append(value)
        if step % 250 == 0:
            log.info("step %d loss %.4f", step, value)
    if loss_csv is not None:
        write_loss_csv(losses, loss_csv)
    return IidmModel.from_blobs(model.to_blobs()), losses


def write_loss_csv(losses, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["step", "loss"])
        for i, v in enumerate(losses, 1):
            wr.writerow([i, repr(float(v))])


def sample_density(model: IidmModel, cond, mask=None, seed=0, n_samples=8, label="estimate"):
    """Average of ``n_samples`` reverse chains, mapped back to density units.

    With a ``mask`` the non-forest pixels are pinned to zero density throughout
    the chain and zeroed in the output. Negative densities are clipped to 0.
    """
    cond = np.asarray(cond, dtype=np.float64)
    if cond.ndim != 3 or cond.shape[0] != model.net.c_cond:
        raise ValueError(f"conditioning must be ({model.net.c_cond}, H, W), got {cond.shape}")
    _, h, w = cond.shape
    rng = stream(seed, f"iidm/{label}")
    y_T = rng.standard_normal((n_samples, 1, h, w))
    batch = Tensor(np.broadcast_to(cond, (n_samples,) + cond.shape).copy())
    known = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (h, w):
            raise ValueError(f"mask shape {mask.shape} != conditioning grid {(h, w)}")
        # outside the forest the density is known to be zero
        known = (np.full((1, 1, h, w), model.to_unit(0.0)), ~mask[None, None])
    with inference(model.net) as net:
        y0 = reverse_chain(y_T, lambda y, t, c: net(y, t, c).data, model.sched, rng, batch, known)
    d = np.clip(model.from_unit(y0.mean(axis=0)[0]), 0.0, None)
    if mask is not None:
        d = np.where(mask, d, 0.0)
    return d
