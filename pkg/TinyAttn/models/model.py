"""Backbone + optional per-layer adapters + task decoder, as one trainable unit."""
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from core import ops
from core.tensor import ComputationTape, Tensor, no_recording
from models.adapter import (
    Placement,
    TinyAttnAdapter,
    average_heads,
    count_adapter_params,
    init_from_single,
    init_independent_heads,
    init_single_head,
    merge_heads,
)
from models.backbone import (
    Backbone,
    BackboneConfig,
    Batch,
    Decoder,
    backbone_forward,
    count_backbone_params,
    count_decoder_params,
    decode,
    set_frozen,
    set_trainable,
)

EVAL_BATCH_SIZE = 256


class TinyAttnModel:
    """A classifier over a (possibly frozen) backbone."""

    def __init__(
        self,
        backbone: Backbone,
        decoder: Decoder,
        adapters: Optional[List[TinyAttnAdapter]] = None,
        placement: Placement = Placement.NONE,
    ):
        placement = Placement(placement)
        if (placement is Placement.NONE) != (adapters is None):
            raise ValueError(
                f"placement '{placement.value}' is inconsistent with "
                f"{'no' if adapters is None else len(adapters)} adapters"
            )
        self.backbone = backbone
        self.decoder = decoder
        self.adapters = adapters
        self.placement = placement

    @property
    def num_classes(self) -> int:
        return self.decoder.num_classes

    def named_tensors(self) -> Iterator[Tuple[str, Tensor]]:
        for name, t in self.backbone.named_tensors():
            yield f'backbone.{name}', t
        for i, adapter in enumerate(self.adapters or ()):
            for name, t in adapter.named_tensors():
                yield f'adapters.{i}.{name}', t
        for name, t in self.decoder.named_tensors():
            yield f'decoder.{name}', t

    def trainable_parameters(self) -> Dict[str, Tensor]:
        return {name: t for name, t in self.named_tensors() if t.trainable}

    def count_trainable(self) -> Dict[str, int]:
        counts = {'adapter': 0, 'decoder': 0, 'backbone': 0}
        for name, t in self.trainable_parameters().items():
            group = name.split('.', 1)[0]
            counts['adapter' if group == 'adapters' else group] += t.size
        counts['total'] = counts['adapter'] + counts['decoder'] + counts['backbone']
        return counts

    def param_report(self) -> Dict[str, Union[int, float]]:
        """Trainable counts plus their share of the whole backbone."""
        return add_percentages(self.count_trainable(), sum(t.size for _, t in self.backbone.named_tensors()))

    def snapshot(self, prefix: str = '') -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_tensors() if name.startswith(prefix)}

    def forward(self, batch: Batch, tape: Optional[ComputationTape] = None) -> Tuple[Tensor, ComputationTape]:
        cls_embedding, tape = backbone_forward(self.backbone, batch, self.adapters, self.placement, tape)
        with tape.recording():
            logits = decode(cls_embedding, self.decoder)
        return logits, tape

    def loss(self, batch: Batch) -> Tuple[Tensor, ComputationTape]:
        logits, tape = self.forward(batch)
        with tape.recording():
            loss = ops.cross_entropy(logits, batch.labels)
        return loss, tape

    def logits(self, batch: Batch) -> np.ndarray:
        """Untaped class logits, computed in chunks of EVAL_BATCH_SIZE."""
        chunks = []
        with no_recording():
            for start in range(0, len(batch), EVAL_BATCH_SIZE):
                chunk = batch.subset(np.arange(start, min(start + EVAL_BATCH_SIZE, len(batch))))
                cls_embedding, _ = backbone_forward(self.backbone, chunk, self.adapters, self.placement, record=False)
                chunks.append(decode(cls_embedding, self.decoder).data)
        return np.concatenate(chunks)

    def predict(self, batch: Batch) -> np.ndarray:
        return self.logits(batch).argmax(axis=1)

    def accuracy(self, batch: Batch) -> float:
        return float(np.mean(self.predict(batch) == batch.labels))

    # -- adapter lifecycle -------------------------------------------------

    def freeze_backbone(self) -> 'TinyAttnModel':
        set_frozen(self.backbone)
        return self

    def unfreeze_backbone(self) -> 'TinyAttnModel':
        set_trainable(self.backbone, True)
        return self

    def attach_adapters(
        self,
        num_heads: int,
        head_dim: int,
        placement: Placement,
        with_biases: bool,
        rng: np.random.Generator,
        init_scale: float = 0.01,
    ) -> 'TinyAttnModel':
        """Attach freshly initialised adapters to every layer."""
        placement = Placement(placement)
        if placement is Placement.NONE:
            raise ValueError('attaching adapters needs a sequential or parallel placement')
        adapters = []
        for _ in range(self.backbone.config.num_layers):
            adapter = TinyAttnAdapter.zeros(self.backbone.config.hidden, num_heads, head_dim, with_biases)
            if num_heads == 1:
                init_single_head(adapter, rng, init_scale)
            else:
                init_independent_heads(adapter, rng, init_scale)
            adapters.append(adapter)
        self.adapters = adapters
        self.placement = placement
        return self

    def expand_adapters(self, num_heads: int, rng: np.random.Generator, eps: float = 1e-3) -> 'TinyAttnModel':
        """Replace every single-head adapter by ``num_heads`` perturbed copies."""
        self._require_adapters()
        self.adapters = [init_from_single(a, num_heads, rng, eps) for a in self.adapters]
        return self

    def merge_adapters(self) -> 'TinyAttnModel':
        self._require_adapters()
        self.adapters = [merge_heads(a) for a in self.adapters]
        return self

    def average_adapters(self) -> 'TinyAttnModel':
        self._require_adapters()
        self.adapters = [average_heads(a) for a in self.adapters]
        return self

    def _require_adapters(self) -> None:
        if not self.adapters:
            raise ValueError('model has no adapters')


def itemize_params(
    config: BackboneConfig,
    num_classes: int,
    mode: str = 'adapter_tune',
    num_heads: Optional[int] = None,
    head_dim: int = 1,
    with_biases: bool = True,
) -> Dict[str, Union[int, float]]:
    """Closed-form trainable-parameter counts for a run.

    Args:
        config: Backbone shape.
        num_classes: Decoder output size.
        mode: ``adapter_tune`` (backbone frozen) or ``full_finetune``.
        num_heads: Adapter heads per layer, or None for a run without adapters.
        head_dim: Adapter head dimension.
        with_biases: Whether the adapters carry biases.

    Returns:
        adapter, decoder, backbone and total trainable counts, the size of the
        whole backbone, and total / adapter counts as a percentage of it.
    """
    if mode not in ('adapter_tune', 'full_finetune'):
        raise ValueError(f"Unknown training mode '{mode}'")
    backbone_total = count_backbone_params(config)
    counts = {
        'adapter': 0 if num_heads is None else count_adapter_params(
            config.num_layers, config.hidden, num_heads, head_dim, with_biases),
        'decoder': count_decoder_params(config.hidden, num_classes),
        'backbone': backbone_total if mode == 'full_finetune' else 0,
    }
    counts['total'] = counts['adapter'] + counts['decoder'] + counts['backbone']
    return add_percentages(counts, backbone_total)


def add_percentages(counts: Dict[str, int], backbone_total: int) -> Dict[str, Union[int, float]]:
    out = dict(counts)
    out['backbone_total'] = backbone_total
    out['percent_of_backbone'] = 100.0 * counts['total'] / backbone_total
    out['adapter_percent_of_backbone'] = 100.0 * counts['adapter'] / backbone_total
    return out
