import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vacl.graph import (
    INPUT,
    AddSpec,
    GraphError,
    LayerSpec,
    ModelGraph,
    bias_name,
    build_residual_mlp,
    extract_cross_layer_groups,
    forward,
    init_params,
    param_count,
    partition_weights,
    standalone_layers,
    validate_graph,
    weight_name,
)
from vacl.tensor import ShapeError


def chain_graph(dims=(3, 4, 2)):
    """A plain layer chain with no additions."""
    layers = []
    layer_input = {}
    src = INPUT
    for i in range(len(dims) - 1):
        layers.append(LayerSpec(id=i, in_dim=dims[i], out_dim=dims[i + 1],
                                relu=i < len(dims) - 2))
        layer_input[i] = src
        src = ("layer", i)
    return ModelGraph(in_dim=dims[0], layers=tuple(layers), adds=(),
                      layer_input=layer_input, output=src)


def two_branch_graph(width=4):
    """Two layers from the input joined by one add, then a head."""
    layers = (
        LayerSpec(id=0, in_dim=3, out_dim=width),
        LayerSpec(id=1, in_dim=3, out_dim=width),
        LayerSpec(id=2, in_dim=width, out_dim=2),
    )
    adds = (AddSpec(id=0, inputs=(("layer", 0), ("layer", 1))),)
    layer_input = {0: INPUT, 1: INPUT, 2: ("add", 0)}
    return ModelGraph(in_dim=3, layers=layers, adds=adds,
                      layer_input=layer_input, output=("layer", 2))


class TestBuilder:
    def test_smallest_instance(self):
        g = build_residual_mlp(2, [8], [1], 2)
        assert len(g.layers) == 4  # stem + 2 in-block + head
        assert len(g.adds) == 1
        assert len(g.adds[0].inputs) == 3

    def test_single_stage_nine_blocks_connected_set(self):
        g = build_residual_mlp(3, [64], [9], 10)
        groups = extract_cross_layer_groups(g).groups
        assert len(groups) == 1
        assert len(groups[0].members) == 19  # stem + 2 per block
        assert groups[0].width == 64

    def test_three_stages_three_groups(self):
        g = build_residual_mlp(2, [16, 32, 64], [3, 3, 3], 2)
        groups = extract_cross_layer_groups(g).groups
        assert [len(grp.members) for grp in groups] == [7, 7, 7]
        assert [grp.width for grp in groups] == [16, 32, 64]

    def test_empty_config_rejected(self):
        with pytest.raises(GraphError):
            build_residual_mlp(2, [], [], 2)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(GraphError):
            build_residual_mlp(2, [8, 16], [1], 2)

    def test_nonpositive_width_rejected(self):
        with pytest.raises(GraphError):
            build_residual_mlp(2, [0], [1], 2)


class TestGroupExtraction:
    def test_chain_has_no_groups(self):
        groupset = extract_cross_layer_groups(chain_graph())
        assert groupset.groups == ()
        g = chain_graph()
        assert standalone_layers(g, extract_cross_layer_groups(g)) == [0, 1]

    def test_two_layers_one_add(self):
        groupset = extract_cross_layer_groups(two_branch_graph())
        assert len(groupset.groups) == 1
        assert groupset.groups[0].members == (0, 1)

    def test_extraction_idempotent(self):
        g = build_residual_mlp(2, [8, 12], [2, 2], 3)
        a = extract_cross_layer_groups(g)
        b = extract_cross_layer_groups(g)
        assert a == b

    def test_brute_force_connectivity_closure(self):
        # Independent oracle: layers are connected iff some add chain joins
        # them; computed here by fixpoint iteration over add node input sets.
        g = build_residual_mlp(2, [16, 32, 64], [3, 3, 3], 2)
        sets = []
        for add in g.adds:
            bucket = set()
            for kind, ident in add.inputs:
                if kind == "layer":
                    bucket.add(("layer", ident))
                elif kind == "add":
                    bucket.add(("addref", ident))
            sets.append((add.id, bucket))
        resolved = {add_id: bucket for add_id, bucket in sets}
        while True:
            pending = False
            for bucket in resolved.values():
                for item in list(bucket):
                    if item[0] == "addref":
                        bucket.remove(item)
                        bucket |= resolved[item[1]] | {("addanchor", item[1])}
                        pending = True
            if not pending:
                break
        # merge buckets sharing an anchor or layer
        merged: list[set] = []
        for bucket in resolved.values():
            hit = None
            for existing in merged:
                if existing & bucket:
                    hit = existing
                    break
            if hit is None:
                merged.append(set(bucket))
            else:
                hit |= bucket
        expected = sorted(
            tuple(sorted(ident for kind, ident in bucket if kind == "layer"))
            for bucket in merged)
        got = sorted(grp.members for grp in extract_cross_layer_groups(g).groups)
        assert got == expected

    def test_unequal_add_widths_rejected(self):
        layers = (
            LayerSpec(id=0, in_dim=3, out_dim=4),
            LayerSpec(id=1, in_dim=3, out_dim=5),
            LayerSpec(id=2, in_dim=4, out_dim=2),
        )
        adds = (AddSpec(id=0, inputs=(("layer", 0), ("layer", 1))),)
        g = ModelGraph(in_dim=3, layers=layers, adds=adds,
                       layer_input={0: INPUT, 1: INPUT, 2: ("add", 0)},
                       output=("layer", 2))
        with pytest.raises(GraphError):
            extract_cross_layer_groups(g)

    @settings(max_examples=25, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_groups_invariant_under_id_permutation(self, rnd):
        g = build_residual_mlp(2, [6, 8], [2, 1], 2)
        ids = [spec.id for spec in g.layers]
        shuffled = ids[:]
        rnd.shuffle(shuffled)
        mapping = dict(zip(ids, shuffled))

        def remap(ref):
            kind, ident = ref
            return (kind, mapping[ident]) if kind == "layer" else ref

        permuted = ModelGraph(
            in_dim=g.in_dim,
            layers=tuple(LayerSpec(id=mapping[s.id], in_dim=s.in_dim,
                                   out_dim=s.out_dim, relu=s.relu)
                         for s in g.layers),
            adds=tuple(AddSpec(id=a.id, inputs=tuple(remap(r) for r in a.inputs))
                       for a in g.adds),
            layer_input={mapping[k]: remap(v) for k, v in g.layer_input.items()},
            output=remap(g.output),
        )
        original = {frozenset(mapping[i] for i in grp.members)
                    for grp in extract_cross_layer_groups(g).groups}
        relabeled = {frozenset(grp.members)
                     for grp in extract_cross_layer_groups(permuted).groups}
        assert original == relabeled


class TestPartition:
    def test_chain_is_all_standalone(self):
        g = chain_graph()
        grouped, standalone = partition_weights(g, extract_cross_layer_groups(g))
        assert grouped == []
        assert len(standalone) == 2 * len(g.layers)

    def test_residual_mlp_standalone_is_head_only(self):
        g = build_residual_mlp(2, [8, 12], [2, 2], 3)
        grouped, standalone = partition_weights(g, extract_cross_layer_groups(g))
        head = g.head_id
        assert sorted(standalone) == sorted([weight_name(head), bias_name(head)])

    def test_partition_is_disjoint_and_exhaustive(self):
        g = build_residual_mlp(2, [16, 32, 64], [3, 3, 3], 2)
        params = init_params(g, 0)
        grouped, standalone = partition_weights(g, extract_cross_layer_groups(g))
        assert not set(grouped) & set(standalone)
        assert sorted(grouped + standalone) == sorted(params)

    def test_unknown_layer_in_group_rejected(self):
        from vacl.graph import CrossLayerGroup, CrossLayerGroupSet
        g = chain_graph()
        bogus = CrossLayerGroupSet(groups=(
            CrossLayerGroup(id=0, members=(99,), width=4),))
        with pytest.raises(GraphError):
            partition_weights(g, bogus)


class TestForward:
    def test_zero_weights_give_zero_logits(self):
        g = build_residual_mlp(2, [8], [1], 2)
        params = init_params(g, 0)
        for p in params.values():
            p.data[...] = 0.0
        out = forward(g, params, np.ones((3, 2)))
        assert np.array_equal(out.data, np.zeros((3, 2)))

    def test_hand_computed_skip_block(self):
        g = build_residual_mlp(2, [2], [1], 2)
        params = init_params(g, 0)
        # stem = identity (relu), block tap1 = relu(x + [0.5, -3]),
        # tap2 swaps tap1 and adds 0.25, head = identity
        params[weight_name(0)].data[...] = np.eye(2)
        params[bias_name(0)].data[...] = 0.0
        params[weight_name(1)].data[...] = np.eye(2)
        params[bias_name(1)].data[...] = [0.5, -3.0]
        params[weight_name(2)].data[...] = [[0.0, 1.0], [1.0, 0.0]]
        params[bias_name(2)].data[...] = [0.25, 0.25]
        params[weight_name(3)].data[...] = np.eye(2)
        params[bias_name(3)].data[...] = 0.0
        out = forward(g, params, np.array([[1.0, 2.0]]))
        # by hand: stem=[1,2]; tap1=relu([1.5,-1])=[1.5,0];
        # tap2=[0+0.25, 1.5+0.25]=[0.25,1.75]; add=[1+1.5+0.25, 2+0+1.75]
        assert np.allclose(out.data, [[2.75, 3.75]], rtol=0, atol=1e-15)

    def test_identical_rows_give_identical_logits(self):
        g = build_residual_mlp(3, [6], [2], 4)
        params = init_params(g, 1)
        row = np.array([0.3, -0.2, 1.0])
        out = forward(g, params, np.tile(row, (5, 1))).data
        assert all(np.array_equal(out[0], out[i]) for i in range(1, 5))

    def test_feature_width_mismatch_rejected(self):
        g = build_residual_mlp(3, [6], [1], 2)
        with pytest.raises(ShapeError):
            forward(g, init_params(g, 0), np.ones((2, 4)))


class TestValidation:
    def test_built_graphs_validate(self):
        validate_graph(build_residual_mlp(5, [4, 6, 8], [2, 1, 2], 3))

    def test_duplicate_layer_ids_rejected(self):
        layers = (LayerSpec(id=0, in_dim=2, out_dim=2),
                  LayerSpec(id=0, in_dim=2, out_dim=2))
        g = ModelGraph(in_dim=2, layers=layers, adds=(),
                       layer_input={0: INPUT}, output=("layer", 0))
        with pytest.raises(GraphError):
            validate_graph(g)

    def test_dangling_layer_rejected(self):
        layers = (LayerSpec(id=0, in_dim=2, out_dim=2),
                  LayerSpec(id=1, in_dim=2, out_dim=2))
        g = ModelGraph(in_dim=2, layers=layers, adds=(),
                       layer_input={0: INPUT, 1: INPUT}, output=("layer", 0))
        with pytest.raises(GraphError):
            validate_graph(g)

    def test_param_count_matches_shapes(self):
        g = build_residual_mlp(2, [8], [1], 2)
        params = init_params(g, 0)
        expected = sum(s.out_dim * s.in_dim + s.out_dim for s in g.layers)
        assert param_count(params) == expected

    def test_init_params_deterministic(self):
        g = build_residual_mlp(2, [8], [1], 2)
        a = init_params(g, 42)
        b = init_params(g, 42)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
