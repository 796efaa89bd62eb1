"""Blockwise PCA knowledge distillation of a teacher coder into a slim one."""
from __future__ import annotations

import logging

import numpy as np

from ..numerics import Adam, Tensor, backward, matmul, mean, reshape, sgd_step, sq_norm, square, transpose
from ..rng import stream
from .eigenbasis import EigenBasis
from .vgg import Coder

log = logging.getLogger(__name__)


class SequencingError(RuntimeError):
    """Block pairs must be trained in order N = 1, 2, 3, 4."""


def encoder_target_loss(w, fbar_e, fbar, prose=False):
    """Distillation loss for centred student features ``fbar_e`` (.., c_e, P).

    Default is ``||W^T Fe - F||^2``; ``prose=True`` gives ``||Fe - W F||^2``.
    """
    w = w if isinstance(w, Tensor) else Tensor(w)
    fbar_e = fbar_e if isinstance(fbar_e, Tensor) else Tensor(fbar_e)
    fbar = fbar if isinstance(fbar, Tensor) else Tensor(fbar)
    if prose:
        return sq_norm(fbar_e - matmul(w, fbar))
    return sq_norm(matmul(transpose(w), fbar_e) - fbar)


def train_teacher(teacher: Coder, images, steps=30, lr=1e-3, batch_size=8, seed=0):
    """Brief autoencoding fit of a full-width coder; returns the loss trace."""
    rng = stream(seed, "teacher/batches")
    opt = Adam(teacher.parameters(), lr=lr)
    trace = []
    for _ in range(steps):
        idx = rng.choice(len(images), size=min(batch_size, len(images)), replace=False)
        x = Tensor(images[np.sort(idx)])
        rec = teacher.decode(teacher.encode(x)[-1], 4)
        loss = mean(square(rec - x))
        backward(loss)
        opt.step()
        trace.append(loss.item())
    teacher.freeze()
    return trace


class BlockwiseDistiller:
    """Holds the frozen teacher, per-layer eigenbases and the student being trained."""

    def __init__(self, teacher: Coder, bases: dict, widths, seed=0, prose_target=False):
        teacher.freeze()
        self.teacher = teacher
        self.bases = bases
        self.student = Coder(widths, teacher.in_ch, stream(seed, "student/init"))
        self.student.freeze()
        self.seed = seed
        self.prose_target = prose_target
        self.trained = []

    def _check_order(self, n):
        if n < 1 or n > 4:
            raise ValueError(f"block index must be 1..4, got {n}")
        if n > len(self.trained) + 1:
            raise SequencingError(f"pair {n} needs pairs 1..{n - 1} trained first (have {self.trained})")

    def _teacher_tap(self, x, n):
        return self.teacher.encode(x, n)[-1].data

    def encoder_distill_loss(self, images, n):
        self._check_order(n)
        basis: EigenBasis = self.bases[n]
        x = Tensor(images)
        fe = self.student.encode(x, n)[-1]
        b, ce, h, w = fe.shape
        f = self._teacher_tap(x, n)
        c = f.shape[1]
        fbar = f.reshape(b, c, h * w) - basis.mean[None, :, None]
        fbar_e = reshape(fe, (b, ce, h * w)) - (basis.w @ basis.mean)[None, :, None]
        return encoder_target_loss(basis.w, fbar_e, fbar, self.prose_target) * (1.0 / b)

    def decoder_loss(self, images, n, return_terms=False):
        """Feature reproduction + image reconstruction + perceptual terms.

        The feature term is absent for n = 1.
        """
        self._check_order(n)
        x = Tensor(images)
        taps = self.student.encode(x, n)
        out = self.student.dec[n - 1](taps[-1])
        terms = {}
        if n > 1:
            terms["feature"] = sq_norm(out - Tensor(taps[-2].data))
            rec = self.student.decode(out, n - 1)
        else:
            rec = out
        terms["image"] = sq_norm(rec - x)
        target = self._teacher_tap(x, n)
        terms["perceptual"] = sq_norm(self.teacher.encode(rec, n)[-1] - Tensor(target))
        total = None
        for t in terms.values():
            total = t if total is None else total + t
        total = total * (1.0 / x.shape[0])
        return (total, terms) if return_terms else total

    def pair_params(self, n):
        return self.student.enc[n - 1].parameters() + self.student.dec[n - 1].parameters()

    def joint_loss(self, images, n):
        return self.encoder_distill_loss(images, n) + self.decoder_loss(images, n)

    def train_block_pair(self, images, n, steps=100, lr=1e-3, batch_size=8, optimizer="adam"):
        """Train enc_n/dec_n on L_enc + L_dec with every lower pair frozen."""
        self._check_order(n)
        if n <= len(self.trained):
            log.info("retraining pair %d; pairs above it are invalidated", n)
            for m in self.trained[n - 1:]:
                for p in self.pair_params(m):
                    p.requires_grad = False
            self.trained = self.trained[: n - 1]
        params = self.pair_params(n)
        for p in params:
            p.requires_grad = True
        rng = stream(self.seed, f"student/pair{n}/batches")
        opt = Adam(params, lr=lr) if optimizer == "adam" else None
        trace = []
        for step in range(steps):
            idx = np.sort(rng.choice(len(images), size=min(batch_size, len(images)), replace=False))
            loss = self.joint_loss(images[idx], n)
            backward(loss)
            trace.append(loss.item())
            if not np.isfinite(trace[-1]):
                raise FloatingPointError(f"pair {n}: loss diverged at step {step} (lr={lr:g})")
            if opt is not None:
                opt.step()
            else:
                sgd_step(params, lr)
        for p in params:
            p.requires_grad = False
        self.trained.append(n)
        return self.student.enc[n - 1], self.student.dec[n - 1], trace
