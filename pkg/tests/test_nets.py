"""Network assembly: specs, presets, transitions, checkpoints."""

import json
import math

import numpy as np
import pytest

from ainet import ail, nets, ops
from ainet.errors import BuildError, ConfigurationError, DomainError

RNG = lambda s=0: np.random.default_rng(s)  # noqa: E731


def tiny(transition="ail", num_classes=10):
    return nets.build(nets.preset("ain-tiny", num_classes, transition), rng=RNG(1))


class TestSpecs:
    def test_round_trip_via_json(self, tmp_path):
        spec = nets.preset("ain-small", transition="maxpool")
        p = tmp_path / "spec.json"
        nets.save_spec(spec, str(p))
        back = nets.load_spec(str(p))
        assert back.to_dict() == spec.to_dict()
        json.loads(p.read_text())  # file is plain JSON

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            nets.LayerSpec("Swizzle")

    def test_preset_names_cover_catalog(self):
        assert set(nets.preset_names()) == {
            "ain-tiny", "ain-small", "ain-121", "ain-169", "ain-audio"
        }
        with pytest.raises(ConfigurationError):
            nets.preset("ain-jumbo")


class TestBuildValidation:
    def test_missing_classifier_tail(self):
        spec = nets.NetworkSpec(
            "x", [nets.LayerSpec("Conv2d", channels=8)], 4, 3, variable_size=False
        )
        with pytest.raises(BuildError, match="Classifier"):
            nets.build(spec)

    def test_variable_size_requires_exactly_one_global_head(self):
        no_gail = nets.NetworkSpec(
            "x",
            [nets.LayerSpec("Conv2d", channels=8), nets.LayerSpec("Classifier")],
            4, 3,
        )
        with pytest.raises(BuildError):
            nets.build(no_gail)
        two = nets.NetworkSpec(
            "x",
            [nets.LayerSpec("Gail", channels=4), nets.LayerSpec("Gail", channels=4),
             nets.LayerSpec("Classifier")],
            4, 3,
        )
        with pytest.raises(BuildError):
            nets.build(two)

    def test_error_message_names_layer_index(self):
        spec = nets.NetworkSpec(
            "x",
            [nets.LayerSpec("Conv2d", channels=0),
             nets.LayerSpec("Gail", channels=4),
             nets.LayerSpec("Classifier")],
            4, 3,
        )
        with pytest.raises(BuildError, match="layer 0"):
            nets.build(spec)

    def test_mixed_rank_layers_rejected(self):
        spec = nets.NetworkSpec(
            "x",
            [nets.LayerSpec("Conv2d", channels=8),
             nets.LayerSpec("Conv1d", channels=8),
             nets.LayerSpec("Gail", channels=4),
             nets.LayerSpec("Classifier")],
            4, 3,
        )
        with pytest.raises(BuildError):
            nets.build(spec)


class TestDenseBlock:
    def test_channel_growth(self):
        spec = nets.NetworkSpec(
            "x",
            [nets.LayerSpec("DenseBlock", repetitions=4, growth=12),
             nets.LayerSpec("Gail", channels=8),
             nets.LayerSpec("Classifier")],
            3, 16,
        )
        net = nets.build(spec, rng=RNG(2))
        y = net.forward(np.zeros((1, 8, 8, 16), np.float32), training=False)
        assert net.layers[0].out_channels == 16 + 4 * 12
        assert y.value.shape == (1, 3)

    def test_zero_repetitions_is_identity_width(self):
        spec = nets.NetworkSpec(
            "x",
            [nets.LayerSpec("DenseBlock", repetitions=0, growth=12),
             nets.LayerSpec("Gail", channels=8),
             nets.LayerSpec("Classifier")],
            3, 16,
        )
        net = nets.build(spec, rng=RNG(2))
        assert net.layers[0].out_channels == 16

    def test_bottleneck_conv_has_no_bias(self):
        net = tiny()
        db = next(l for l in net.layers if "denseblock" in l.name)
        rep = db.reps[0]
        assert rep["conv1"].bias is None
        assert rep["conv2"].bias is not None


class TestParameterAccounting:
    def test_tiny_count_matches_hand_formula(self):
        def conv_n(k, ci, co, bias=True):
            return k * k * ci * co + (co if bias else 0)

        def ail_n(ci, co):
            return conv_n(1, ci, co) + conv_n(3, ci, co)

        def bn_n(c):
            return 2 * c

        def db_n(c, reps, g):
            total = 0
            for _ in range(reps):
                total += bn_n(c) + conv_n(1, c, 4 * g, bias=False)
                total += bn_n(4 * g) + conv_n(3, 4 * g, g)
                c += g
            return total

        want = (
            conv_n(3, 3, 16)
            + ail_n(16, 16)
            + db_n(16, 4, 12)
            + ail_n(64, 64)
            + db_n(64, 4, 12)
            + ail_n(112, 64)
            + 64 * 10 + 10
        )
        assert tiny().parameter_count() == want

    def test_transitions_change_only_transition_parameters(self):
        counts = {t: tiny(t).parameter_count() for t in nets.TRANSITION_KINDS}
        assert counts["ail"] > counts["maxpool"]
        # maxpool (pool + 1x1 projection) and strided 1x1 conv match exactly
        assert counts["maxpool"] == counts["stridedconv"]


class TestForwardContracts:
    def test_variable_size_closure(self):
        net = tiny()
        for e in (32, 49, 64, 96, 4):
            p = net.predict(RNG(3).random((e, e, 3)).astype(np.float32))
            assert p.shape == (10,)
            assert p.sum() == pytest.approx(1.0, abs=1e-6)

    def test_untrained_classifier_is_exactly_uniform(self):
        # zero-init classifier: logits all 0.0, so entries are bit-identical
        p = tiny().predict(RNG(4).random((40, 40, 3)).astype(np.float32))
        assert np.all(p == p[0])
        assert p.sum() == pytest.approx(1.0, abs=1e-6)

    def test_below_minimum_extent_raises_with_minimum_named(self):
        net = tiny()
        with pytest.raises(DomainError, match="minimum 4"):
            net.predict(np.zeros((3, 8, 3), np.float32))

    def test_transition_kinds_interchange_shapes(self):
        x = RNG(5).random((1, 40, 36, 3)).astype(np.float32)
        shapes = {}
        for t in nets.TRANSITION_KINDS:
            net = tiny(t)
            h = net.forward(x, training=False)
            shapes[t] = h.value.shape
            # layer by layer the spatial pyramid is identical
            sizes = []
            node = ops.as_node(x)
            for layer in net.layers:
                node = layer.forward(node, False, None)
                sizes.append(node.value.shape[1:3] if node.value.ndim == 4 else ())
            shapes[t + ".pyramid"] = sizes[:-1]
        assert shapes["ail"] == shapes["maxpool"] == shapes["stridedconv"]
        assert shapes["ail.pyramid"] == shapes["maxpool.pyramid"]

    def test_audio_preset_is_one_dimensional(self):
        net = nets.build(nets.preset("ain-audio", num_classes=6), rng=RNG(6))
        assert net.ndim == 1
        p = net.predict(RNG(6).random((95, 40)).astype(np.float32))
        assert p.shape == (6,)
        assert p.sum() == pytest.approx(1.0, abs=1e-6)

    def test_batch_and_single_agree(self):
        net = tiny()
        x = RNG(7).random((3, 32, 32, 3)).astype(np.float32)
        batched = net.forward(x, training=False).value
        for i in range(3):
            single = net.forward(x[i], training=False).value
            np.testing.assert_allclose(single, batched[i], atol=1e-5)

    def test_deep_preset_builds_and_halves_extent(self):
        net = nets.build(nets.preset("ain-121", num_classes=7), rng=RNG(8))
        y = net.forward(np.zeros((1, 64, 64, 3), np.float32), training=False)
        assert y.value.shape == (1, 7)
        assert net.parameter_count() > 1_000_000

    def test_grad_mode_threading(self):
        spec = nets.preset("ain-tiny", grad_mode=ail.GRAD_HEURISTIC)
        assert all(
            l.grad_mode == ail.GRAD_HEURISTIC for l in spec.layers if l.kind in ("Lail", "Gail")
        )


class TestCheckpoints:
    def test_round_trip_bit_identical(self, tmp_path):
        net = tiny()
        # move batchnorm state off initialization so flags and stats matter
        x = RNG(9).random((4, 32, 32, 3)).astype(np.float32)
        net.forward(x, training=True)
        nets.save_checkpoint(net, str(tmp_path / "ck"), {"epoch": 3, "note": "t"})
        back, extra = nets.load_checkpoint(str(tmp_path / "ck"))
        assert extra == {"epoch": 3, "note": "t"}
        probe = RNG(10).random((48, 40, 3)).astype(np.float32)
        np.testing.assert_array_equal(net.predict(probe), back.predict(probe))

    def test_missing_tensor_file_detected(self, tmp_path):
        net = tiny()
        nets.save_checkpoint(net, str(tmp_path / "ck"))
        victim = next((tmp_path / "ck").glob("*.weights.aint"))
        victim.unlink()
        with pytest.raises((ConfigurationError, FileNotFoundError)):
            nets.load_checkpoint(str(tmp_path / "ck"))

    def test_checkpoint_rebuilds_from_embedded_spec(self, tmp_path):
        net = nets.build(nets.preset("ain-audio", num_classes=4), rng=RNG(11))
        nets.save_checkpoint(net, str(tmp_path / "ck"))
        back, _ = nets.load_checkpoint(str(tmp_path / "ck"))
        assert back.spec.to_dict() == net.spec.to_dict()
        assert back.ndim == 1


def test_min_input_is_stride_product():
    assert tiny().min_input() == 4
    deep = nets.build(nets.preset("ain-121"), rng=RNG(12))
    # stem /2 plus four transitions
    assert deep.min_input() == 2 ** 5


def test_strides_give_ceil_pyramid():
    net = tiny()
    x = np.zeros((1, 33, 21, 3), np.float32)
    node = ops.as_node(x)
    extents = [(33, 21)]
    for layer in net.layers[:-1]:
        node = layer.forward(node, False, None)
        extents.append(node.value.shape[1:3])
    h, w = 33, 21
    for layer, (eh, ew) in zip(net.layers[:-1], extents[1:]):
        h, w = math.ceil(h / layer.stride), math.ceil(w / layer.stride)
        if eh != 1 or ew != 1:  # global head collapses to 1x1
            assert (eh, ew) == (h, w)
