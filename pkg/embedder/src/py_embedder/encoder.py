"""The encoder behind the service: render segments, run the model, pool.

Inputs carry one segment (rendered as [CLS] s1 [SEP]) or two (rendered as
[CLS] s1 [SEP] s2 [SEP]). Overlong segments are cut token-wise before the
special tokens go in: one segment keeps max_tokens - 2 tokens, a pair splits
max_tokens - 3 evenly with the odd token going to the first segment. A
rendered input therefore never exceeds the token limit, whatever the caller
sends.
"""

import hashlib
import logging
import threading

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from py_embedder.config import ConfigurationError, ServiceConfig

log = logging.getLogger(__name__)


def segment_budgets(n_segments: int, max_tokens: int) -> tuple[int, ...]:
    """Per-segment token allowances, net of special tokens."""
    if n_segments == 1:
        return (max_tokens - 2,)
    if n_segments == 2:
        budget = max_tokens - 3
        return (budget - budget // 2, budget // 2)
    raise ConfigurationError(f"inputs carry 1 or 2 segments, got {n_segments}")


def _weights_digest(state_dict: dict) -> str:
    digest = hashlib.sha256()
    for name in sorted(state_dict):
        digest.update(name.encode("utf-8"))
        tensor = state_dict[name].detach().cpu().contiguous()
        digest.update(np.ascontiguousarray(tensor.numpy()).tobytes())
    return digest.hexdigest()[:12]


class Encoder:
    """Deterministic inference wrapper around a transformer encoder.

    Evaluation mode (dropout off), no autograd, and one lock serializing
    forward passes: the same request always returns bit-identical vectors
    within a running service.
    """

    def __init__(self, config: ServiceConfig) -> None:
        torch.manual_seed(0)
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.model)
        # length policing is ours; keep the tokenizer from warning about it
        self.tokenizer.model_max_length = 1 << 30
        self.model = AutoModel.from_pretrained(config.model)
        self.model.to(config.device)
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)
        position_limit = getattr(self.model.config, "max_position_embeddings", None)
        self.max_tokens = config.max_tokens
        if position_limit is not None and position_limit < self.max_tokens:
            log.warning(
                "max_tokens %d exceeds the model position limit %d, clamping",
                config.max_tokens, position_limit,
            )
            self.max_tokens = int(position_limit)
        self.version = f"{config.model}@{_weights_digest(self.model.state_dict())}"
        self._lock = threading.Lock()

    def render(self, segments: tuple[str, ...], max_tokens: int | None = None) -> tuple[list[int], list[int]]:
        """Token ids and segment-type ids for one input, specials included."""
        limit = self.max_tokens if max_tokens is None else min(max_tokens, self.max_tokens)
        budgets = segment_budgets(len(segments), limit)
        pieces = [
            self.tokenizer.encode(text, add_special_tokens=False)[:budget]
            for text, budget in zip(segments, budgets)
        ]
        cls_id = self.tokenizer.cls_token_id
        sep_id = self.tokenizer.sep_token_id
        input_ids = [cls_id] + pieces[0] + [sep_id]
        type_ids = [0] * len(input_ids)
        if len(pieces) == 2:
            input_ids += pieces[1] + [sep_id]
            type_ids += [1] * (len(pieces[1]) + 1)
        return input_ids, type_ids

    def embed(self, batch: list[tuple[str, ...]], max_tokens: int | None = None) -> list[list[float]]:
        """Order-aligned float32 vectors, one per input."""
        rendered = [self.render(segments, max_tokens) for segments in batch]
        width = max(len(ids) for ids, _ in rendered)
        pad_id = self.tokenizer.pad_token_id or 0
        input_ids = torch.full((len(rendered), width), pad_id, dtype=torch.long)
        type_ids = torch.zeros((len(rendered), width), dtype=torch.long)
        mask = torch.zeros((len(rendered), width), dtype=torch.long)
        for row, (ids, types) in enumerate(rendered):
            input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
            type_ids[row, : len(types)] = torch.tensor(types, dtype=torch.long)
            mask[row, : len(ids)] = 1
        device = self.config.device
        with self._lock, torch.no_grad():
            output = self.model(
                input_ids=input_ids.to(device),
                attention_mask=mask.to(device),
                token_type_ids=type_ids.to(device),
            )
            hidden = output.last_hidden_state
            if self.config.pooling == "cls":
                pooled = hidden[:, 0, :]
            else:
                weights = mask.to(device).unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * weights).sum(dim=1) / weights.sum(dim=1)
        vectors = pooled.cpu().to(torch.float32).numpy()
        return [row.tolist() for row in vectors]
