"""Masking-loss objective and the interpreter optimization loop.

The loss pulls the classifier's distribution on the explanation toward its
distribution on the input, pushes the distribution on the complement away,
and penalizes the explanation's mean spectral magnitude:

    total = lambda_in * d(p_x || p_i) - lambda_out * d(p_x || p_iout)
            + lambda_reg * spectral_l1(i)

with d the cross-entropy and p_x detached (a constant soft target).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import torch

from .classifier import AudioClassifier, ClassProbabilities, classifier_hash, classify_tensor
from .datasets import Corpus
from .dsp import DEFAULT_SPECTRAL_CFG, StftConfig, Waveform, spectral_l1, spectral_l1_tensor
from .interpreter import Interpreter, forward_batch

_LOG_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_in: float = 5.0
    lambda_out: float = 0.2
    lambda_reg: float = 6.0

    def __post_init__(self):
        for name in ("lambda_in", "lambda_out", "lambda_reg"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


@dataclass(frozen=True)
class LossBreakdown:
    mask_in_term: float
    mask_out_term: float
    reg_term: float
    total: float


def _as_probs(p) -> np.ndarray:
    arr = np.asarray(p.probs if isinstance(p, ClassProbabilities) else p, dtype=np.float64)
    if arr.ndim != 1 or arr.min() < 0 or abs(arr.sum() - 1.0) > 1e-6:
        raise ValueError("probabilities must be a 1-D simplex vector")
    return arr


def cross_entropy_divergence(probs_ref: np.ndarray, probs: np.ndarray) -> float:
    """d(p_ref || p) = -sum_c p_ref[c] * log(p[c] + 1e-12)."""
    p_ref = _as_probs(probs_ref)
    p = _as_probs(probs)
    if p_ref.shape != p.shape:
        raise ValueError(f"shape mismatch: {p_ref.shape} vs {p.shape}")
    return float(-(p_ref * np.log(p + _LOG_EPS)).sum())


def masking_loss(probs_x, probs_i, probs_iout, i: Waveform, w: LossWeights) -> LossBreakdown:
    mask_in = cross_entropy_divergence(probs_x, probs_i)
    mask_out = cross_entropy_divergence(probs_x, probs_iout)
    reg = spectral_l1(i, DEFAULT_SPECTRAL_CFG)
    total = w.lambda_in * mask_in - w.lambda_out * mask_out + w.lambda_reg * reg
    return LossBreakdown(mask_in_term=mask_in, mask_out_term=mask_out, reg_term=reg, total=total)


def _cross_entropy_tensor(p_ref: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    return -(p_ref * torch.log(p + _LOG_EPS)).sum(dim=-1)


def batch_loss_terms(
    clf: AudioClassifier,
    itp: Interpreter,
    x: torch.Tensor,
    w: LossWeights,
    spectral_cfg: StftConfig = DEFAULT_SPECTRAL_CFG,
    detach_taps: bool = True,
) -> dict:
    """Differentiable batch-mean loss terms; gradients reach only the
    interpreter (the classifier is consumed frozen, its soft output on x is
    detached)."""
    out = forward_batch(itp, clf, x, detach_taps=detach_taps)
    with torch.no_grad():
        probs_x = classify_tensor(clf, x)
    probs_i = classify_tensor(clf, out["i"])
    probs_iout = classify_tensor(clf, out["i_out"])
    mask_in = _cross_entropy_tensor(probs_x, probs_i).mean()
    mask_out = _cross_entropy_tensor(probs_x, probs_iout).mean()
    reg = spectral_l1_tensor(out["i"], spectral_cfg).mean()
    total = w.lambda_in * mask_in - w.lambda_out * mask_out + w.lambda_reg * reg
    return {"mask_in": mask_in, "mask_out": mask_out, "reg": reg, "total": total}


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 5e-4
    batch_size: int = 8
    max_epochs: int = 50
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 or self.clip_norm <= 0:
            raise ValueError("invalid optimizer configuration")


def _split_tensor(corpus: Corpus, split: str, dtype: torch.dtype) -> torch.Tensor:
    samples = corpus.split_samples(split)
    if not samples:
        raise ValueError(f"empty split: {split!r}")
    lengths = {s.wave.num_samples for s in samples}
    if len(lengths) != 1:
        raise ValueError("batched training requires uniform clip length")
    stacked = np.stack([s.wave.samples for s in samples])
    return torch.from_numpy(stacked).to(dtype)


def train_interpreter(
    clf: AudioClassifier,
    itp: Interpreter,
    corpus: Corpus,
    w: LossWeights = LossWeights(),
    opt_cfg: OptimizerConfig = OptimizerConfig(),
    seed: int = 0,
    history_path=None,
) -> tuple[Interpreter, list[dict]]:
    """Optimize the interpreter against the frozen classifier; returns the
    best checkpoint by validation total loss plus the per-epoch history."""
    if not clf.frozen:
        raise ValueError("classifier must be frozen before interpreter training")
    clf_hash_before = classifier_hash(clf)
    dtype = next(itp.parameters()).dtype
    x_train = _split_tensor(corpus, "train", dtype)
    x_valid = _split_tensor(corpus, "valid", dtype)

    torch.manual_seed(seed)
    rng = np.random.default_rng([seed, 0xB2])
    optimizer = torch.optim.Adam(itp.parameters(), lr=opt_cfg.lr)
    history: list[dict] = []
    best_valid = math.inf
    best_state = copy.deepcopy(itp.state_dict())
    last_good_state = copy.deepcopy(itp.state_dict())
    writer = open(history_path, "a", encoding="utf-8") if history_path else None

    def valid_total() -> float:
        itp.eval()
        totals = []
        with torch.no_grad():
            for start in range(0, x_valid.shape[0], opt_cfg.batch_size):
                xb = x_valid[start : start + opt_cfg.batch_size]
                terms = batch_loss_terms(clf, itp, xb, w)
                totals.append(float(terms["total"]) * xb.shape[0])
        return sum(totals) / x_valid.shape[0]

    try:
        for epoch in range(1, opt_cfg.max_epochs + 1):
            itp.train()
            order = rng.permutation(x_train.shape[0])
            sums = {"mask_in": 0.0, "mask_out": 0.0, "reg": 0.0, "total": 0.0}
            for start in range(0, len(order), opt_cfg.batch_size):
                idx = order[start : start + opt_cfg.batch_size]
                xb = x_train[torch.from_numpy(idx)]
                optimizer.zero_grad()
                terms = batch_loss_terms(clf, itp, xb, w)
                total = terms["total"]
                if not torch.isfinite(total):
                    itp.load_state_dict(last_good_state)
                    raise RuntimeError(
                        f"training aborted: non-finite loss at epoch {epoch}; "
                        "interpreter restored to last good checkpoint"
                    )
                total.backward()
                torch.nn.utils.clip_grad_norm_(itp.parameters(), opt_cfg.clip_norm)
                optimizer.step()
                for key in sums:
                    sums[key] += float(terms[key].detach()) * len(idx)
            record = {key: sums[key] / len(order) for key in sums}
            record["epoch"] = epoch
            record["valid_total"] = valid_total()
            record = {
                k: record[k] for k in ("epoch", "mask_in", "mask_out", "reg", "total", "valid_total")
            }
            history.append(record)
            if writer:
                writer.write(json.dumps(record) + "\n")
                writer.flush()
            last_good_state = copy.deepcopy(itp.state_dict())
            if record["valid_total"] < best_valid:
                best_valid = record["valid_total"]
                best_state = copy.deepcopy(itp.state_dict())
    finally:
        if writer:
            writer.close()

    itp.load_state_dict(best_state)
    itp.eval()
    if classifier_hash(clf) != clf_hash_before:
        raise RuntimeError("freeze contract violated: classifier changed during training")
    return itp, history


def finite_difference_check(
    loss_fn: Callable[[], torch.Tensor],
    params_subset: Iterable[torch.Tensor],
    eps: float = 1e-5,
    num_checks: int = 32,
    seed: int = 0,
) -> float:
    """Central-difference validation of autograd gradients on randomly chosen
    parameter coordinates.  Returns the max error relative to
    max(|analytic|, |finite difference|, 1), so near-zero gradients are judged
    on absolute agreement."""
    if not (1e-7 <= eps <= 1e-4):
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    params = [p for p in params_subset]
    if not params:
        return 0.0
    base = loss_fn()
    grads = torch.autograd.grad(base, params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for g, p in zip(grads, params)]
    sizes = [p.numel() for p in params]
    total = int(sum(sizes))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(num_checks, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    max_rel = 0.0
    with torch.no_grad():
        for flat in sorted(int(c) for c in chosen):
            pi = int(np.searchsorted(offsets, flat, side="right") - 1)
            local = flat - offsets[pi]
            view = params[pi].view(-1)  # in-place mutation must hit the parameter storage
            orig = view[local].item()
            view[local] = orig + eps
            loss_plus = float(loss_fn())
            view[local] = orig - eps
            loss_minus = float(loss_fn())
            view[local] = orig
            fd = (loss_plus - loss_minus) / (2.0 * eps)
            an = grads[pi].reshape(-1)[local].item()
            rel = abs(fd - an) / max(abs(fd), abs(an), 1.0)
            max_rel = max(max_rel, rel)
    return max_rel
