from importlib import resources

import pytest

from sqj2.graph import (
    MAX_ABS_FL,
    ConvSpec,
    NetworkError,
    PoolSpec,
    conv_out_dim,
    load_network,
    save_network,
)

TINY = """
# toy pipeline
c1 conv input 8 8 3 3 1 1 8 1 7 5 7 12
p1 maxpool c1 - - - 2 2 0 - - 5 5 - -
c2 conv p1 - - - 1 1 0 10 0 5 4 6 10
gap global_avgpool c2 - - - - - - - - 4 4 - -
prob softmax gap - - - - - - - - 4 - - -
"""


class TestOutDim:
    def test_examples(self):
        assert conv_out_dim(227, 3, 2, 0) == 113
        assert conv_out_dim(32, 3, 2, 0) == 15
        assert conv_out_dim(8, 3, 1, 1) == 8
        assert conv_out_dim(5, 2, 2, 0) == 2  # floor division drops the tail

    def test_conv_spec_shapes(self):
        s = ConvSpec(8, 10, 3, 3, 2, 1, 16)
        assert s.out_shape == (4, 5, 16)
        with pytest.raises(NetworkError):
            ConvSpec(2, 2, 3, 3, 1, 0, 8)  # output collapses
        with pytest.raises(NetworkError):
            ConvSpec(8, 8, 3, 3, 1, -1, 8)

    def test_pool_spec(self):
        assert PoolSpec(3, 2, 0).out_hw(15, 15) == (7, 7)


class TestParse:
    def test_tiny_shapes(self):
        g = load_network(TINY)
        assert [n.name for n in g.nodes] == ["c1", "p1", "c2", "gap", "prob"]
        assert g.input_shape == (8, 8, 3)
        by = g.by_name
        assert by["c1"].out_shape == (8, 8, 8)
        assert by["p1"].out_shape == (4, 4, 8)
        assert by["c2"].out_shape == (4, 4, 10)
        assert by["gap"].out_shape == (1, 1, 10)
        assert by["prob"].out_shape == (1, 1, 10)
        assert g.output_node.name == "prob"
        assert g.input_fl == 7

    def test_format_inheritance(self):
        g = load_network(TINY)
        # p1 declares no fl_w/fl_b; c2 inherits fl_in from p1's fl_out
        assert g.by_name["p1"].fl_in == 5
        assert g.by_name["c2"].fl_in == 5

    def test_packaged_asset_parses(self):
        text = resources.files("sqj2").joinpath("assets/tiny.cfg").read_text()
        g = load_network(text)
        assert g.output_node.kind == "softmax"

    def test_field_count_enforced(self):
        with pytest.raises(NetworkError, match="15 fields"):
            load_network("c1 conv input 8 8 3 3 1 1 8 1 7 5 7\n")

    def test_bad_integer(self):
        with pytest.raises(NetworkError, match="integer"):
            load_network("c1 conv input 8 8 x 3 1 1 8 1 - - - -\n")

    def test_defined_before_use(self):
        bad = "c1 conv later 8 8 3 3 1 1 8 1 - - - -\n"
        with pytest.raises(NetworkError, match="unknown input"):
            load_network(bad)

    def test_reserved_and_duplicate_names(self):
        with pytest.raises(NetworkError):
            load_network("input conv input 8 8 3 1 1 0 4 0 - - - -\n")
        dup = ("a conv input 8 8 3 1 1 0 4 0 - - - -\n"
               "a conv a - - - 1 1 0 4 0 - - - -\n")
        with pytest.raises(NetworkError):
            load_network(dup)

    def test_input_shape_required_at_entry(self):
        with pytest.raises(NetworkError, match="h w c"):
            load_network("c1 conv input - - - 3 1 1 8 1 - - - -\n")

    def test_single_output_enforced(self):
        g = load_network("a conv input 8 8 3 1 1 0 4 0 - - - -\n"
                         "b conv a - - - 1 1 0 4 0 - - - -\n"
                         "c conv a - - - 1 1 0 4 0 - - - -\n")
        with pytest.raises(NetworkError, match="exactly one output"):
            g.output_node


class TestFormatRules:
    def test_edge_format_mismatch(self):
        bad = ("a conv input 8 8 3 1 1 0 4 0 7 5 7 12\n"
               "b conv a - - - 1 1 0 4 0 6 4 6 10\n")
        with pytest.raises(NetworkError, match="fl_in"):
            load_network(bad)

    def test_maxpool_cannot_change_format(self):
        bad = ("a conv input 8 8 3 1 1 0 4 0 7 5 7 12\n"
               "p maxpool a - - - 2 2 0 - - 5 6 - -\n")
        with pytest.raises(NetworkError, match="cannot change"):
            load_network(bad)

    def test_concat_cannot_change_format(self):
        bad = ("a conv input 8 8 3 1 1 0 4 0 7 5 7 12\n"
               "b conv a - - - 1 1 0 4 0 5 5 6 10\n"
               "c conv a - - - 1 1 0 4 0 5 5 6 10\n"
               "cat concat b,c - - - - - - - - 5 6 - -\n")
        with pytest.raises(NetworkError, match="cannot change"):
            load_network(bad)

    def test_concat_mixed_producer_formats(self):
        bad = ("a conv input 8 8 3 1 1 0 4 0 7 5 7 12\n"
               "b conv a - - - 1 1 0 4 0 5 5 6 10\n"
               "c conv a - - - 1 1 0 4 0 5 4 6 10\n"
               "cat concat b,c - - - - - - - - - - - -\n")
        with pytest.raises(NetworkError, match="fl_in|mixed formats"):
            load_network(bad)

    def test_gap_may_change_format(self):
        ok = ("a conv input 4 4 3 1 1 0 4 0 7 5 7 12\n"
              "g global_avgpool a - - - - - - - - 5 7 - -\n")
        g = load_network(ok)
        assert g.by_name["g"].fl_out == 7

    def test_bias_shift_envelope(self):
        # acc_fl = 7+7 = 14; fl_b = 15 puts the shift at -1
        bad = "a conv input 8 8 3 1 1 0 4 0 7 5 7 15\n"
        with pytest.raises(NetworkError, match="bias shift"):
            load_network(bad)
        # fl_b far below drives the shift past 48
        bad = "a conv input 8 8 3 1 1 0 4 0 24 5 25 0\n"
        with pytest.raises(NetworkError, match="bias shift"):
            load_network(bad)

    def test_output_shift_envelope(self):
        bad = "a conv input 8 8 3 1 1 0 4 0 7 31 7 12\n"  # shift -17
        with pytest.raises(NetworkError, match="output shift"):
            load_network(bad)

    def test_abs_fl_cap(self):
        bad = f"a conv input 8 8 3 1 1 0 4 0 {MAX_ABS_FL + 1} 5 7 12\n"
        with pytest.raises(NetworkError, match="fl"):
            load_network(bad)


class TestKinds:
    def test_concat_shapes(self):
        g = load_network("a conv input 8 8 3 1 1 0 4 0 - - - -\n"
                         "b conv a - - - 1 1 0 6 0 - - - -\n"
                         "c conv a - - - 1 1 0 10 0 - - - -\n"
                         "cat concat b,c - - - - - - - - - - - -\n")
        assert g.by_name["cat"].out_shape == (8, 8, 16)

    def test_concat_spatial_mismatch(self):
        bad = ("a conv input 8 8 3 1 1 0 4 0 - - - -\n"
               "b conv a - - - 3 2 0 6 0 - - - -\n"
               "cat concat a,b - - - - - - - - - - - -\n")
        with pytest.raises(NetworkError, match="spatial"):
            load_network(bad)

    def test_softmax_needs_1x1(self):
        bad = ("a conv input 8 8 3 1 1 0 4 0 - - - -\n"
               "s softmax a - - - - - - - - - - - -\n")
        with pytest.raises(NetworkError, match="1x1"):
            load_network(bad)

    def test_reshape_shape_and_padding_rule(self):
        g = load_network("r reshape input 227 227 3 3 2 0 32 - - - - -\n"
                         "c conv r - - - 1 1 0 64 1 - - - -\n")
        assert g.by_name["r"].out_shape == (113, 113, 32)
        assert g.by_name["c"].out_shape == (113, 113, 64)
        bad = "r reshape input 227 227 3 3 2 0 26 - - - - -\n"
        with pytest.raises(NetworkError, match="padded channels"):
            load_network(bad)


class TestRoundTrip:
    def test_save_load_save_fixed_point(self):
        g = load_network(TINY)
        text = save_network(g)
        again = save_network(load_network(text))
        assert text == again

    def test_round_trip_preserves_everything(self):
        g = load_network(TINY)
        h = load_network(save_network(g))
        for a, b in zip(g.nodes, h.nodes):
            assert (a.name, a.kind, a.inputs) == (b.name, b.kind, b.inputs)
            assert a.out_shape == b.out_shape
            assert (a.fl_in, a.fl_out, a.fl_w, a.fl_b) == \
                (b.fl_in, b.fl_out, b.fl_w, b.fl_b)
            assert a.conv == b.conv and a.pool == b.pool
