"""The assembled network and its three-part training loss.

``assemble_losses`` consumes a ``TrainingBatch``: every per-frame array is
already stacked so the convolutional work runs over large folds instead of
per-sample loops. All view indices in a batch are zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Module, Tensor, ops
from .classifiers import ActionClassifier, ViewClassifier
from .config import ArchConfig
from .decoders import CrossViewDecoder, ReconstructionDecoder
from .encoder import EncoderState, SequenceEncoder


@dataclass
class LossBundle:
    """Scalar loss terms (tape tensors) plus reporting extras.

    ``total`` always recomposes as l_xview + alpha*l_recon + beta*l_cls with
    the alpha/beta that were in effect; ``xview_by_view`` breaks the
    cross-view term down by zero-based target view; ``view_accuracy`` is the
    per-timestep view classifier accuracy on this batch.
    """

    l_xview: Tensor
    l_recon: Tensor
    l_cls: Tensor
    total: Tensor
    alpha: float
    beta: float
    xview_by_view: dict = field(default_factory=dict)
    view_accuracy: float = 0.0


@dataclass
class TrainingBatch:
    """Arrays for one optimization step over B sequences.

    Cross-view targets are flattened into a pair list: pair p predicts view
    ``pair_view[p]`` of sample ``pair_sample[p]``, using that view's anchor
    depths and ground-truth flows.
    """

    frames: np.ndarray          # (B,T,C,H,W) source-view inputs
    source_views: np.ndarray    # (B,)
    pair_sample: np.ndarray     # (P,)
    pair_view: np.ndarray       # (P,)
    anchor_depths: np.ndarray   # (P,T,1,H,W)
    flow_targets: np.ndarray    # (P,T,3,fh,fw)
    recon_targets: np.ndarray   # (B,T,3,fh,fw)
    action_labels: np.ndarray   # (B,)

    def __post_init__(self):
        b = self.frames.shape[0]
        p = len(self.pair_sample)
        if b == 0:
            raise ValueError("empty batch")
        if p == 0:
            raise ValueError("batch has no cross-view targets")
        if len(self.pair_view) != p or self.anchor_depths.shape[0] != p:
            raise ValueError("pair arrays disagree in length")
        if self.flow_targets.shape[0] != p:
            raise ValueError(
                f"flows for {self.flow_targets.shape[0]} pairs but {p} targets"
            )
        if np.any(self.pair_view == self.source_views[self.pair_sample]):
            raise ValueError("a target view equals its sample's source view")


def _time_major(arr: np.ndarray) -> np.ndarray:
    """(N,T,...) -> (T*N,...) with row t*N+n."""
    return np.ascontiguousarray(arr.swapaxes(0, 1)).reshape((-1,) + arr.shape[2:])


class ViewMotionModel(Module):
    """Encoder, the two decoders, and both classifier heads."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = SequenceEncoder(cfg)
        self.xview_decoder = CrossViewDecoder(cfg)
        self.recon_decoder = ReconstructionDecoder(cfg)
        self.view_classifier = ViewClassifier(cfg)
        self.action_classifier = ActionClassifier(cfg)

    def init_bn_stats(self) -> None:
        for m in self.modules():
            if hasattr(m, "init_running_stats"):
                m.init_running_stats()

    def decode_cross_view(self, enc: Tensor, anchor_depth, source_view: int,
                          target_view: int) -> Tensor:
        if source_view == target_view:
            raise ValueError(
                f"cross-view decoding requires a different target view, "
                f"got source == target == {source_view}"
            )
        if not isinstance(anchor_depth, Tensor):
            anchor_depth = Tensor(np.asarray(anchor_depth))
        return self.xview_decoder(enc, anchor_depth)

    def action_scores(self, frames) -> Tensor:
        return self.action_classifier(self.encoder(frames))

    def assemble_losses(self, batch: TrainingBatch, alpha: float, beta: float,
                        adversarial: bool = True) -> LossBundle:
        cfg = self.cfg
        b, t = batch.frames.shape[:2]
        state = self.encoder(batch.frames)
        # row t*B + b addresses (time t, sample b)
        enc_flat = ops.reshape(
            ops.stack_rows(state.encodings), (t * b, 2 * cfg.k, cfg.h, cfg.w)
        )

        map_elems = 3 * cfg.flow_hw * cfg.flow_hw

        # cross-view term: gather the source encodings once per (time, pair)
        pair_idx = np.concatenate(
            [step * b + batch.pair_sample for step in range(t)]
        )
        enc_pairs = ops.gather_rows(enc_flat, pair_idx)
        anchors = Tensor(_time_major(batch.anchor_depths))
        preds = self.xview_decoder(enc_pairs, anchors)
        targets = _time_major(batch.flow_targets)
        l_xview = ops.scale(
            ops.mse_loss(preds, Tensor(targets), "sum"), 1.0 / (map_elems * b)
        )

        p = len(batch.pair_sample)
        sq = (preds.data - targets).reshape(t, p, -1)
        per_pair = np.einsum("tpe,tpe->p", sq, sq)
        by_view: dict = {}
        for pair, view in enumerate(batch.pair_view):
            key = int(view)
            by_view[key] = by_view.get(key, 0.0) + per_pair[pair] / (map_elems * b)

        recon_preds = self.recon_decoder(enc_flat)
        l_recon = ops.scale(
            ops.mse_loss(recon_preds, Tensor(_time_major(batch.recon_targets)), "sum"),
            1.0 / (map_elems * b),
        )

        # adversarial path: reversed gradients reach the encoder; during
        # warmup the classifier sees detached encodings instead
        if adversarial:
            cls_in = ops.grad_reverse(enc_flat, cfg.grl_lambda)
        else:
            cls_in = enc_flat.detach()
        labels = np.tile(batch.source_views, t)
        logits = self.view_classifier(cls_in)
        l_cls = ops.scale(
            ops.softmax_cross_entropy(logits, labels, "sum"), 1.0 / b
        )
        view_accuracy = float(np.mean(np.argmax(logits.data, axis=1) == labels))

        total = ops.add(l_xview, ops.scale(l_recon, alpha))
        if beta != 0.0:
            total = ops.add(total, ops.scale(l_cls, beta))
        return LossBundle(
            l_xview=l_xview,
            l_recon=l_recon,
            l_cls=l_cls,
            total=total,
            alpha=alpha,
            beta=beta,
            xview_by_view=by_view,
            view_accuracy=view_accuracy,
        )
