"""Residual MLP graphs: construction, validation, and cross-layer grouping.

A model is a DAG of dense layers and element-wise addition nodes. Layers that
meet at a chain of addition nodes must keep aligned channel counts, which is
what makes joint regularization and structural pruning across them possible.
The "channel" of a dense layer is one output unit: a row of the weight matrix
together with its bias entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .tensor import Array, ShapeError, Tensor
from . import tensor as T

NodeRef = tuple[str, int]

INPUT: NodeRef = ("input", 0)


class GraphError(ValueError):
    """The graph description is structurally invalid."""


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: out = W x + b, optionally followed by relu."""

    id: int
    in_dim: int
    out_dim: int
    relu: bool = False


@dataclass(frozen=True)
class AddSpec:
    """Element-wise addition of two or more producer nodes of equal width."""

    id: int
    inputs: tuple[NodeRef, ...]


@dataclass(frozen=True)
class ModelGraph:
    """Layers, addition nodes, and the wiring between them.

    Immutable after construction; parameters live in a separate dict keyed by
    ``layer{id}.weight`` / ``layer{id}.bias`` so one graph can be shared
    across runs.
    """

    in_dim: int
    layers: tuple[LayerSpec, ...]
    adds: tuple[AddSpec, ...]
    layer_input: Mapping[int, NodeRef]
    output: NodeRef

    def layer(self, layer_id: int) -> LayerSpec:
        for spec in self.layers:
            if spec.id == layer_id:
                return spec
        raise GraphError(f"unknown layer id {layer_id}")

    def add_node(self, add_id: int) -> AddSpec:
        for spec in self.adds:
            if spec.id == add_id:
                return spec
        raise GraphError(f"unknown add node id {add_id}")

    def node_dim(self, ref: NodeRef) -> int:
        kind, ident = ref
        if kind == "input":
            return self.in_dim
        if kind == "layer":
            return self.layer(ident).out_dim
        if kind == "add":
            return self.node_dim(self.add_node(ident).inputs[0])
        raise GraphError(f"unknown node kind {kind!r}")

    @property
    def head_id(self) -> int:
        kind, ident = self.output
        if kind != "layer":
            raise GraphError("graph output must be a layer")
        return ident

    def consumers(self, ref: NodeRef) -> list[NodeRef]:
        out: list[NodeRef] = []
        for spec in self.layers:
            if self.layer_input[spec.id] == ref:
                out.append(("layer", spec.id))
        for spec in self.adds:
            if ref in spec.inputs:
                out.append(("add", spec.id))
        return out

    def eval_order(self) -> list[NodeRef]:
        """Nodes in dependency order, ending at the output."""
        order: list[NodeRef] = []
        seen: set[NodeRef] = set()
        stack: list[tuple[NodeRef, bool]] = [(self.output, False)]
        while stack:
            ref, expanded = stack.pop()
            if expanded:
                order.append(ref)
                continue
            if ref in seen:
                continue
            seen.add(ref)
            stack.append((ref, True))
            for dep in self._deps(ref):
                if dep not in seen:
                    stack.append((dep, False))
        return order

    def _deps(self, ref: NodeRef) -> tuple[NodeRef, ...]:
        kind, ident = ref
        if kind == "input":
            return ()
        if kind == "layer":
            return (self.layer_input[ident],)
        return self.add_node(ident).inputs


def weight_name(layer_id: int) -> str:
    return f"layer{layer_id}.weight"


def bias_name(layer_id: int) -> str:
    return f"layer{layer_id}.bias"


def validate_graph(graph: ModelGraph) -> None:
    """Check structural invariants; raise GraphError on the first violation."""
    if graph.in_dim < 1:
        raise GraphError("input dimension must be positive")
    layer_ids = [spec.id for spec in graph.layers]
    if len(set(layer_ids)) != len(layer_ids):
        raise GraphError("layer ids are not unique")
    add_ids = [spec.id for spec in graph.adds]
    if len(set(add_ids)) != len(add_ids):
        raise GraphError("add node ids are not unique")
    known: set[NodeRef] = {INPUT}
    known.update(("layer", i) for i in layer_ids)
    known.update(("add", i) for i in add_ids)

    for spec in graph.layers:
        if spec.in_dim < 1 or spec.out_dim < 1:
            raise GraphError(f"layer {spec.id} has non-positive dims")
        src = graph.layer_input.get(spec.id)
        if src is None or src not in known:
            raise GraphError(f"layer {spec.id} reads an unknown node {src}")
    for spec in graph.adds:
        if len(spec.inputs) < 2:
            raise GraphError(f"add node {spec.id} needs at least 2 producers")
        for ref in spec.inputs:
            if ref not in known:
                raise GraphError(f"add node {spec.id} reads an unknown node {ref}")
    if graph.output not in known:
        raise GraphError("output references an unknown node")

    order = graph.eval_order()
    reachable = set(order)
    # Cycle check: every reachable node's dependencies must precede it.
    position = {ref: i for i, ref in enumerate(order)}
    for ref in order:
        for dep in graph._deps(ref):
            if position.get(dep, -1) >= position[ref]:
                raise GraphError(f"cycle detected through {ref}")
    # Width agreement, resolvable only once ordering is known.
    for spec in graph.adds:
        if ("add", spec.id) not in reachable:
            continue
        dims = {graph.node_dim(ref) for ref in spec.inputs}
        if len(dims) != 1:
            raise GraphError(f"add node {spec.id} joins unequal widths {sorted(dims)}")
    for spec in graph.layers:
        if ("layer", spec.id) not in reachable:
            continue
        if graph.node_dim(graph.layer_input[spec.id]) != spec.in_dim:
            raise GraphError(f"layer {spec.id} in_dim {spec.in_dim} does not match "
                             f"its producer width")
    # Exactly one output head: no layer or add node other than the output may
    # be a sink, reachable or not.
    all_nodes = [("layer", spec.id) for spec in graph.layers]
    all_nodes += [("add", spec.id) for spec in graph.adds]
    sinks = [ref for ref in all_nodes
             if ref != graph.output and not graph.consumers(ref)]
    if sinks:
        raise GraphError(f"graph has extra sinks: {sinks}")


def build_residual_mlp(
    in_dim: int,
    widths: list[int],
    blocks_per_stage: list[int],
    num_classes: int,
) -> ModelGraph:
    """Stack of residual stages, a projection between stages, and a classifier head.

    Each block holds two in-block layers on the branch (linear -> relu ->
    linear); the block's add node sums the skip path with both branch taps, so
    every in-block layer participates in the element-wise connected set of its
    stage. Stage transitions use a plain projection layer whose output joins
    the next stage's first add.
    """
    if not widths or not blocks_per_stage:
        raise GraphError("widths and blocks_per_stage must be non-empty")
    if len(widths) != len(blocks_per_stage):
        raise GraphError("widths and blocks_per_stage must have the same length")
    if any(w < 1 for w in widths) or any(b < 1 for b in blocks_per_stage):
        raise GraphError("widths and block counts must be positive")
    if in_dim < 1 or num_classes < 1:
        raise GraphError("in_dim and num_classes must be positive")

    layers: list[LayerSpec] = []
    adds: list[AddSpec] = []
    layer_input: dict[int, NodeRef] = {}
    next_layer = 0
    next_add = 0

    def new_layer(src: NodeRef, in_d: int, out_d: int, use_relu: bool) -> NodeRef:
        nonlocal next_layer
        spec = LayerSpec(id=next_layer, in_dim=in_d, out_dim=out_d, relu=use_relu)
        layers.append(spec)
        layer_input[spec.id] = src
        next_layer += 1
        return ("layer", spec.id)

    stream = new_layer(INPUT, in_dim, widths[0], use_relu=True)  # stem
    for stage, (width, blocks) in enumerate(zip(widths, blocks_per_stage)):
        if stage > 0:
            stream = new_layer(stream, widths[stage - 1], width, use_relu=False)  # projection
        for _ in range(blocks):
            tap1 = new_layer(stream, width, width, use_relu=True)
            tap2 = new_layer(tap1, width, width, use_relu=False)
            adds.append(AddSpec(id=next_add, inputs=(stream, tap1, tap2)))
            stream = ("add", next_add)
            next_add += 1
    head = new_layer(stream, widths[-1], num_classes, use_relu=False)

    graph = ModelGraph(
        in_dim=in_dim,
        layers=tuple(layers),
        adds=tuple(adds),
        layer_input=dict(layer_input),
        output=head,
    )
    validate_graph(graph)
    return graph


def init_params(graph: ModelGraph, seed: int) -> dict[str, Tensor]:
    """Scaled uniform fan-in initialization; biases start at zero."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for spec in graph.layers:
        bound = 1.0 / np.sqrt(spec.in_dim)
        w = rng.uniform(-bound, bound, size=(spec.out_dim, spec.in_dim))
        params[weight_name(spec.id)] = Tensor(w, requires_grad=True, name=weight_name(spec.id))
        params[bias_name(spec.id)] = Tensor(
            np.zeros(spec.out_dim), requires_grad=True, name=bias_name(spec.id))
    return params


def param_count(params: Mapping[str, Tensor]) -> int:
    return int(sum(p.data.size for p in params.values()))


def validate_bindings(graph: ModelGraph, params: Mapping[str, Tensor]) -> None:
    for spec in graph.layers:
        w = params.get(weight_name(spec.id))
        b = params.get(bias_name(spec.id))
        if w is None or b is None:
            raise GraphError(f"missing parameters for layer {spec.id}")
        if w.data.shape != (spec.out_dim, spec.in_dim) or b.data.shape != (spec.out_dim,):
            raise GraphError(f"layer {spec.id} parameter shapes "
                             f"{w.data.shape}/{b.data.shape} do not match spec "
                             f"({spec.out_dim}, {spec.in_dim})")


def forward(graph: ModelGraph, params: Mapping[str, Tensor], batch: Array | Tensor) -> Tensor:
    """Evaluate the graph on a batch, returning the logits tape node."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 2 or x.shape[1] != graph.in_dim:
        raise ShapeError(f"batch shape {x.shape} does not match input width "
                         f"{graph.in_dim}")
    values: dict[NodeRef, Tensor] = {INPUT: x}
    for ref in graph.eval_order():
        kind, ident = ref
        if kind == "input":
            continue
        if kind == "layer":
            spec = graph.layer(ident)
            src = values[graph.layer_input[ident]]
            w = params[weight_name(ident)]
            b = params[bias_name(ident)]
            out = T.linear(src, w, b)
            if spec.relu:
                out = T.relu(out)
            values[ref] = out
        else:
            inputs = graph.add_node(ident).inputs
            acc = values[inputs[0]]
            for other in inputs[1:]:
                acc = T.add(acc, values[other])
            values[ref] = acc
    return values[graph.output]


@dataclass(frozen=True)
class CrossLayerGroup:
    """Layers whose outputs meet at a chain of element-wise additions."""

    id: int
    members: tuple[int, ...]
    width: int


@dataclass(frozen=True)
class CrossLayerGroupSet:
    groups: tuple[CrossLayerGroup, ...]

    def member_map(self) -> dict[int, int]:
        """layer id -> group id for all grouped layers."""
        out: dict[int, int] = {}
        for g in self.groups:
            for layer_id in g.members:
                out[layer_id] = g.id
        return out

    def group(self, group_id: int) -> CrossLayerGroup:
        for g in self.groups:
            if g.id == group_id:
                return g
        raise GraphError(f"unknown group id {group_id}")


def extract_cross_layer_groups(graph: ModelGraph) -> CrossLayerGroupSet:
    """Union-find over addition nodes.

    Two layers land in the same group iff their outputs meet at an add node,
    directly or through a chain of adds. Groups are canonically ordered by
    their smallest member id, so extraction does not depend on the order in
    which layers or adds were declared.
    """
    validate_graph(graph)
    parent: dict[NodeRef, NodeRef] = {}

    def find(ref: NodeRef) -> NodeRef:
        root = ref
        while parent.setdefault(root, root) != root:
            root = parent[root]
        while parent[ref] != root:
            parent[ref], ref = root, parent[ref]
        return root

    def union(a: NodeRef, b: NodeRef) -> None:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb

    for spec in graph.adds:
        anchor = ("add", spec.id)
        for ref in spec.inputs:
            if ref[0] in ("layer", "add"):
                union(anchor, ref)

    components: dict[NodeRef, list[int]] = {}
    for spec in graph.layers:
        ref = ("layer", spec.id)
        if ref in parent:
            components.setdefault(find(ref), []).append(spec.id)

    groups: list[CrossLayerGroup] = []
    for members in sorted(components.values(), key=min):
        members = sorted(members)
        widths = {graph.layer(i).out_dim for i in members}
        if len(widths) != 1:
            raise GraphError(f"grouped layers {members} have unequal widths {sorted(widths)}")
        groups.append(CrossLayerGroup(id=len(groups), members=tuple(members),
                                      width=widths.pop()))
    return CrossLayerGroupSet(groups=tuple(groups))


def standalone_layers(graph: ModelGraph, groupset: CrossLayerGroupSet) -> list[int]:
    grouped = set(groupset.member_map())
    return [spec.id for spec in graph.layers if spec.id not in grouped]


def partition_weights(
    graph: ModelGraph, groupset: CrossLayerGroupSet
) -> tuple[list[str], list[str]]:
    """Split parameter names into (grouped, standalone) sets.

    The two lists are disjoint and together cover every parameter exactly once.
    """
    layer_ids = {spec.id for spec in graph.layers}
    for g in groupset.groups:
        unknown = [i for i in g.members if i not in layer_ids]
        if unknown:
            raise GraphError(f"group {g.id} references unknown layers {unknown}")
    grouped_ids = set(groupset.member_map())
    grouped: list[str] = []
    standalone: list[str] = []
    for spec in graph.layers:
        bucket = grouped if spec.id in grouped_ids else standalone
        bucket.append(weight_name(spec.id))
        bucket.append(bias_name(spec.id))
    return sorted(grouped), sorted(standalone)
