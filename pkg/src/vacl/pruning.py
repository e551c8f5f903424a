"""Channel importance, threshold masks, and structural graph rewriting.

Importance of channel i in layer l is its share of the layer's total L1 mass.
A channel below the threshold is removed; layers tied together by element-wise
additions share one mask, decided by consensus: a cross-layer channel goes
only if it is below threshold in every member layer. Pruning is a pure
rewrite producing a new, smaller graph and parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .graph import (
    AddSpec,
    CrossLayerGroupSet,
    GraphError,
    LayerSpec,
    ModelGraph,
    NodeRef,
    bias_name,
    extract_cross_layer_groups,
    param_count,
    validate_bindings,
    validate_graph,
    weight_name,
)
from .penalties import layer_channel_matrix
from .tensor import Array, Tensor


@dataclass(frozen=True)
class PruneMask:
    """Per-layer boolean keep-vectors over output channels."""

    keep: Mapping[int, Array]

    def kept(self, layer_id: int) -> int:
        return int(self.keep[layer_id].sum())


@dataclass
class PruneReport:
    params_before: int
    params_after: int
    pruned_ratio: float
    removed_per_group: dict[int, int]
    kept_per_layer: dict[int, int]
    accuracy_before: float | None = None
    accuracy_after: float | None = None

    def to_dict(self) -> dict:
        return {
            "params_before": int(self.params_before),
            "params_after": int(self.params_after),
            "pruned_ratio": float(self.pruned_ratio),
            "removed_per_group": {str(k): int(v) for k, v in sorted(self.removed_per_group.items())},
            "kept_per_layer": {str(k): int(v) for k, v in sorted(self.kept_per_layer.items())},
            "accuracy_before": self.accuracy_before,
            "accuracy_after": self.accuracy_after,
        }


def filter_importance(channel_matrix: Array) -> Array:
    """Normalized per-channel L1 mass of one layer.

    Rows of ``channel_matrix`` are channel slices. If the whole layer is zero
    the importance is defined as uniform 1/M, which keeps downstream ratios
    finite on freshly zeroed layers.
    """
    if channel_matrix.ndim != 2 or channel_matrix.shape[0] < 1:
        raise ValueError("channel matrix must be 2-D with at least one channel")
    mass = np.abs(channel_matrix).sum(axis=1)
    total = mass.sum()
    if total == 0.0:
        return np.full(mass.shape, 1.0 / mass.size)
    return mass / total


def importance_map(graph: ModelGraph, params: Mapping[str, Tensor]) -> dict[int, Array]:
    """Importance vector for every layer in the graph."""
    return {spec.id: filter_importance(layer_channel_matrix(params, spec.id))
            for spec in graph.layers}


def group_importance(groupset: CrossLayerGroupSet, imap: Mapping[int, Array],
                     group_id: int) -> Array:
    """Importance heatmap of one cross-layer group.

    Rows are member layers in id order, columns are channel indices.
    """
    group = groupset.group(group_id)
    return np.stack([imap[layer_id] for layer_id in group.members])


def select_prunable(
    imap: Mapping[int, Array],
    tau: float,
    graph: ModelGraph,
    groupset: CrossLayerGroupSet,
) -> PruneMask:
    """Threshold rule: remove channel i iff its importance is below tau.

    Cross-layer groups decide by consensus (below tau in every member layer)
    and share one keep-vector. The classifier head is never pruned on the
    output side. If a rule would empty a layer, the single most important
    channel is kept.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    head = graph.head_id
    keep: dict[int, Array] = {}
    for group in groupset.groups:
        stacked = np.stack([imap[layer_id] for layer_id in group.members])
        remove = np.all(stacked < tau, axis=0)
        kv = ~remove
        if not kv.any():
            kv = np.zeros(group.width, dtype=bool)
            kv[int(np.argmax(stacked.mean(axis=0)))] = True
        for layer_id in group.members:
            keep[layer_id] = kv.copy()
    grouped = set(groupset.member_map())
    for spec in graph.layers:
        if spec.id in grouped:
            continue
        if spec.id == head:
            keep[spec.id] = np.ones(spec.out_dim, dtype=bool)
            continue
        kv = imap[spec.id] >= tau
        if not kv.any():
            kv = np.zeros(spec.out_dim, dtype=bool)
            kv[int(np.argmax(imap[spec.id]))] = True
        keep[spec.id] = kv
    return PruneMask(keep=keep)


def _node_keep(graph: ModelGraph, mask: PruneMask, ref: NodeRef) -> Array:
    kind, ident = ref
    if kind == "input":
        return np.ones(graph.in_dim, dtype=bool)
    if kind == "layer":
        return np.asarray(mask.keep[ident], dtype=bool)
    return _node_keep(graph, mask, graph.add_node(ident).inputs[0])


def _check_mask(graph: ModelGraph, mask: PruneMask,
                groupset: CrossLayerGroupSet) -> None:
    for spec in graph.layers:
        kv = mask.keep.get(spec.id)
        if kv is None:
            raise GraphError(f"mask missing layer {spec.id}")
        kv = np.asarray(kv, dtype=bool)
        if kv.shape != (spec.out_dim,):
            raise GraphError(f"mask for layer {spec.id} has shape {kv.shape}, "
                             f"expected ({spec.out_dim},)")
        if not kv.any():
            raise GraphError(f"mask removes every channel of layer {spec.id}")
    for group in groupset.groups:
        first = np.asarray(mask.keep[group.members[0]], dtype=bool)
        for layer_id in group.members[1:]:
            if not np.array_equal(first, np.asarray(mask.keep[layer_id], dtype=bool)):
                raise GraphError(f"mask differs across group {group.id} members "
                                 f"{group.members[0]} and {layer_id}")


def prune(
    graph: ModelGraph,
    params: Mapping[str, Tensor],
    mask: PruneMask,
) -> tuple[ModelGraph, dict[str, Tensor], PruneReport]:
    """Rewrite the graph and parameters with the masked channels removed.

    Removing channel i of a producing layer deletes its weight row and bias
    entry, and the matching input column of every consumer, including layers
    fed through addition nodes. The inputs never shrink. The original graph
    and parameters are untouched.
    """
    groupset = extract_cross_layer_groups(graph)
    _check_mask(graph, mask, groupset)

    new_layers: list[LayerSpec] = []
    new_params: dict[str, Tensor] = {}
    for spec in graph.layers:
        keep_out = np.asarray(mask.keep[spec.id], dtype=bool)
        keep_in = _node_keep(graph, mask, graph.layer_input[spec.id])
        w = params[weight_name(spec.id)].data
        b = params[bias_name(spec.id)].data
        w2 = np.ascontiguousarray(w[keep_out][:, keep_in])
        b2 = b[keep_out].copy()
        new_layers.append(LayerSpec(id=spec.id, in_dim=int(keep_in.sum()),
                                    out_dim=int(keep_out.sum()), relu=spec.relu))
        new_params[weight_name(spec.id)] = Tensor(w2, requires_grad=True,
                                                  name=weight_name(spec.id))
        new_params[bias_name(spec.id)] = Tensor(b2, requires_grad=True,
                                                name=bias_name(spec.id))

    new_graph = ModelGraph(
        in_dim=graph.in_dim,
        layers=tuple(new_layers),
        adds=tuple(AddSpec(id=a.id, inputs=a.inputs) for a in graph.adds),
        layer_input=dict(graph.layer_input),
        output=graph.output,
    )
    validate_graph(new_graph)
    validate_bindings(new_graph, new_params)

    before = param_count(params)
    after = param_count(new_params)
    removed = {g.id: int(g.width - mask.kept(g.members[0]))
               for g in groupset.groups}
    report = PruneReport(
        params_before=before,
        params_after=after,
        pruned_ratio=1.0 - after / before,
        removed_per_group=removed,
        kept_per_layer={spec.id: mask.kept(spec.id) for spec in graph.layers},
    )
    return new_graph, new_params, report
