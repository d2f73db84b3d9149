"""Permutation-invariant set blocks.

A block applies an inner network to every element of a set, averages
over the set axis, and applies an outer network to the aggregate.  Mean
aggregation (not sum) keeps outputs stable across the 5..10-channel
range the sampler produces.
"""

from __future__ import annotations

from typing import Sequence

from .tensor import Tensor, ShapeError, mean, stack


def _as_batch(elements: Sequence[Tensor] | Tensor, axis: int) -> Tensor:
    if isinstance(elements, Tensor):
        return elements
    if len(elements) == 0:
        raise ShapeError("set block: empty element set")
    ref = elements[0].shape
    for e in elements[1:]:
        if e.shape != ref:
            raise ShapeError(f"set block: ragged element shapes {ref} vs "
                             f"{e.shape}")
    return stack(list(elements), axis=axis)


class DeepSetBlock:
    """inner per element, mean over the set axis, outer on the aggregate."""

    def __init__(self, inner, outer, set_axis: str = "instances"):
        self.inner = inner
        self.outer = outer
        self.set_axis = set_axis

    def __call__(self, elements: Sequence[Tensor] | Tensor,
                 axis: int = 0) -> Tensor:
        return apply_set(self.inner, self.outer, elements, axis=axis)

    def named_parameters(self):
        for name, p in self.inner.named_parameters():
            yield f"inner/{name}", p
        for name, p in self.outer.named_parameters():
            yield f"outer/{name}", p


def apply_set(inner, outer, elements: Sequence[Tensor] | Tensor,
              axis: int = 0) -> Tensor:
    """outer(mean over elements of inner(element)), order-independent.

    ``elements`` is either a list of same-shaped tensors or an already
    stacked tensor whose ``axis`` is the set axis.  The mean reduces in
    ascending index order, so reordering a set perturbs the result only
    at float rounding level.
    """
    batch = _as_batch(elements, axis)
    if batch.shape[axis] == 0:
        raise ShapeError("apply_set: empty set axis")
    return outer(mean(inner(batch), axis=axis))


def apply_per_element(network, elements: Sequence[Tensor] | Tensor,
                      axis: int = 0):
    """Map a network independently over set elements (order-equivariant).

    Returns a list when given a list, else the stacked batch result.
    """
    if isinstance(elements, Tensor):
        return network(elements)
    batch = _as_batch(elements, axis)
    out = network(batch)
    from .tensor import slice_axis, reshape
    pieces = []
    for i in range(len(elements)):
        piece = slice_axis(out, axis, i, i + 1)
        pieces.append(reshape(piece, piece.shape[:axis] + piece.shape[axis + 1:]))
    return pieces
