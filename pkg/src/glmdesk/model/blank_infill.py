"""Blank-infilling samples: corrupted context (Part A) plus regenerated spans (Part B)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..attention import MaskSpec
from ..numerics import make_rng


@dataclass
class BlankInfillSample:
    input_ids: np.ndarray  # [seq]
    positions: np.ndarray  # [seq, 2] (pos_a, pos_b)
    prefix_len: int  # |Part A|
    targets: np.ndarray  # [seq]; PAD where loss_mask is False
    loss_mask: np.ndarray  # [seq] bool, True on Part B
    span_order: tuple = ()  # original span indices in Part-B order

    @property
    def mask(self) -> MaskSpec:
        return MaskSpec.prefix(self.prefix_len)

    @property
    def part_a(self) -> np.ndarray:
        return self.input_ids[: self.prefix_len]

    @property
    def part_b(self) -> np.ndarray:
        return self.input_ids[self.prefix_len :]

    @property
    def part_b_targets(self) -> np.ndarray:
        return self.targets[self.loss_mask]

    def __len__(self) -> int:
        return int(self.input_ids.shape[0])


def _check_spans(spans, n):
    ordered = sorted((int(s), int(l)) for s, l in spans)
    for start, length in ordered:
        if length < 1:
            raise ValueError(f"span length must be >= 1, got {length}")
        if start < 0 or start + length > n:
            raise ValueError(f"span [{start}, {start + length}) out of range for length {n}")
    for (s0, l0), (s1, _) in zip(ordered, ordered[1:]):
        if s1 < s0 + l0:
            raise ValueError(f"overlapping spans at [{s0}, {s0 + l0}) and [{s1}, ...)")
    return ordered


def make_blank_infill(
    tokens: Sequence[int],
    spans: Sequence[Sequence[int]],
    cfg,
    seed: int | np.random.Generator | None = None,
) -> BlankInfillSample:
    """Replace each ``(start, length)`` span with one MASK and append the spans.

    Part B holds, per span, ``SOP`` followed by the span tokens; the targets
    are the span tokens followed by ``EOP``.  Span tokens take ``pos_a`` from
    their MASK slot in Part A and ``pos_b = 1..len+1``.  With a seed the
    Part-B span order is shuffled, and positions follow the shuffled order.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    ordered = _check_spans(spans, len(tokens))

    part_a: list[int] = []
    mask_slot: list[int] = []
    cursor = 0
    for start, length in ordered:
        part_a.extend(tokens[cursor:start].tolist())
        mask_slot.append(len(part_a))
        part_a.append(cfg.mask_id)
        cursor = start + length
    part_a.extend(tokens[cursor:].tolist())

    order = list(range(len(ordered)))
    if seed is not None and order:
        order = [int(i) for i in make_rng(seed).permutation(len(ordered))]

    ids = list(part_a)
    pos = [(i, 0) for i in range(len(part_a))]
    targets = [cfg.pad_id] * len(part_a)
    loss = [False] * len(part_a)
    for idx in order:
        start, length = ordered[idx]
        span = tokens[start : start + length].tolist()
        ids.extend([cfg.sop_id] + span)
        pos.extend((mask_slot[idx], b) for b in range(1, length + 2))
        targets.extend(span + [cfg.eop_id])
        loss.extend([True] * (length + 1))

    return BlankInfillSample(
        input_ids=np.asarray(ids, dtype=np.int64),
        positions=np.asarray(pos, dtype=np.int64).reshape(-1, 2),
        prefix_len=len(part_a),
        targets=np.asarray(targets, dtype=np.int64),
        loss_mask=np.asarray(loss, dtype=bool),
        span_order=tuple(order),
    )


def sample_spans(
    length: int,
    rng: np.random.Generator,
    mean_span: float = 3.0,
    mask_ratio: float = 0.15,
) -> list[tuple[int, int]]:
    """Draw disjoint spans with geometric lengths (mean ``mean_span``).

    Spans are drawn until roughly ``mask_ratio`` of the tokens are covered
    (at least one span), then placed uniformly among the remaining tokens.
    """
    if length < 1:
        return []
    budget = max(1, int(round(mask_ratio * length)))
    lengths: list[int] = []
    while sum(lengths) < budget:
        span = int(min(rng.geometric(1.0 / mean_span), length - sum(lengths)))
        if span < 1:
            break
        lengths.append(span)
    free = length - sum(lengths)
    slots = np.sort(rng.integers(0, free + 1, size=len(lengths)))
    spans = []
    shift = 0
    for slot, span in zip(slots, lengths):
        spans.append((int(slot) + shift, span))
        shift += span
    return spans
