import numpy as np
import pytest

from binkit import sae
from binkit import tensor as T
from binkit.sae import Model, TopologySpec


def tiny(kind, window=16, filters=3, kernel=3, depth=2):
    return TopologySpec(kind, window, filters, kernel, depth)


def zero_model(spec):
    return Model(spec, {n: np.zeros(s, np.float32) for n, s in spec.parameter_shapes()})


class TestTopologySpec:
    def test_defaults(self):
        spec = TopologySpec()
        assert (spec.kind, spec.window_side, spec.filters, spec.kernel_side, spec.depth) == ("REDNET", 256, 64, 5, 5)
        assert TopologySpec(window_side=64).depth == 3

    def test_kind_case_insensitive(self):
        assert TopologySpec("cae", 64).kind == "CAE"

    @pytest.mark.parametrize("kwargs", [
        dict(kind="UNET"), dict(window_side=64, depth=7), dict(window_side=60),
        dict(filters=0), dict(kernel_side=4), dict(depth=0),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TopologySpec(**kwargs)

    @pytest.mark.parametrize("f,k,d", [(16, 5, 3), (64, 5, 5), (3, 3, 2), (1, 1, 1)])
    def test_parameter_count_closed_form(self, f, k, d):
        spec = TopologySpec("CAE", 2 ** d * 4, f, k, d)
        expected = (f * k * k + f) + (2 * d - 1) * (f * f * k * k + f) + (f * k * k + 1)
        assert spec.parameter_count() == expected

    def test_cae_64_16_3(self):
        spec = TopologySpec("CAE", 64, 16, 3, 3)
        expected = (16 * 9 + 16) + 5 * (16 * 16 * 9 + 16) + (16 * 9 + 1)
        assert spec.parameter_count() == expected == 11905

    def test_small_preset_count(self):
        assert sae.PRESETS["small"].parameter_count() == 32897


class TestBuild:
    def test_deterministic(self):
        a = sae.build_model(tiny("REDNET"), seed=4)
        b = sae.build_model(tiny("REDNET"), seed=4)
        c = sae.build_model(tiny("REDNET"), seed=5)
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])
        assert not np.array_equal(a.params["enc0.w"], c.params["enc0.w"])

    def test_reference_spec_deterministic(self):
        spec = TopologySpec("REDNET", 256, 64, 5, 3)
        a, b = sae.build_model(spec, seed=0), sae.build_model(spec, seed=0)
        assert all(np.array_equal(a.params[n], b.params[n]) for n in a.params)

    def test_init_ranges(self):
        model = sae.build_model(TopologySpec("CAE", 32, 8, 5, 2), seed=0)
        limit = np.sqrt(6.0 / ((8 + 8) * 25))
        assert np.abs(model.params["dec0.w"]).max() <= limit
        assert np.all(model.params["enc1.b"] == 0)
        assert all(v.dtype == np.float32 for v in model.params.values())

    def test_rejects_bad_params(self):
        spec = tiny("CAE")
        params = dict(zero_model(spec).params)
        params["out.b"] = np.zeros(2, np.float32)
        with pytest.raises(ValueError, match="out.b"):
            Model(spec, params)
        params.pop("out.b")
        with pytest.raises(ValueError, match="names"):
            Model(spec, params)


@pytest.mark.parametrize("kind", sae.KINDS)
class TestForward:
    def test_shape_and_range(self, kind):
        model = sae.build_model(TopologySpec(kind, 64, 4, 5), seed=1)
        x = np.random.default_rng(0).random((3, 64, 64))
        out = model.predict(x)
        assert out.shape == x.shape and out.dtype == np.float32
        assert np.all((out > 0) & (out < 1))

    def test_zero_model_is_half(self, kind):
        model = zero_model(TopologySpec(kind, 64, 4, 5))
        out = sae.forward_window(model, np.random.default_rng(1).random((64, 64)))
        np.testing.assert_array_equal(out, 0.5)
        assert not sae.binarize_activations(out, 0.5).any()

    def test_batching_independent(self, kind):
        model = sae.build_model(tiny(kind), seed=2)
        x = np.random.default_rng(3).random((20, 16, 16))
        full = model.predict(x)
        np.testing.assert_allclose(full[17], model.predict(x[17:18])[0], atol=1e-6)

    def test_end_to_end_gradient(self, kind):
        spec = tiny(kind, window=8, filters=2, kernel=3, depth=2)
        base = sae.build_model(spec, seed=3)
        rng = np.random.default_rng(4)
        # non-zero biases keep pre-activations off the relu kink
        params = {n: v.astype(np.float64) + (0.05 * rng.standard_normal(v.shape) if n.endswith(".b") else 0)
                  for n, v in base.params.items()}
        x = rng.random((2, 1, 8, 8))
        gt = rng.random((2, 1, 8, 8)) < 0.3

        def loss_of(p):
            out, _ = Model(spec, p).graph(x)
            return float(T.soft_fmeasure_loss(out, gt).values)

        out, leaves = Model(spec, params).graph(x, requires_grad=True)
        T.soft_fmeasure_loss(out, gt).backward()
        for name in ("enc0.w", "dec1.b", "out.w"):
            idx = tuple(rng.integers(0, d) for d in params[name].shape)
            plus = {k: v.copy() for k, v in params.items()}
            minus = {k: v.copy() for k, v in params.items()}
            plus[name][idx] += 1e-5
            minus[name][idx] -= 1e-5
            numeric = (loss_of(plus) - loss_of(minus)) / 2e-5
            assert leaves[name].grad[idx] == pytest.approx(numeric, rel=1e-3, abs=1e-7)


class TestDocument:
    def test_threshold_is_strict(self):
        a = np.array([0.9, 0.2, 0.5, 0.51])
        np.testing.assert_array_equal(sae.binarize_activations(a, 0.5), [True, False, False, True])
        assert sae.binarize_activations(a, 0.0).all()
        assert not sae.binarize_activations(a, 1.0).any()

    @pytest.mark.parametrize("tau", [-0.1, 1.5])
    def test_tau_range(self, tau):
        with pytest.raises(ValueError):
            sae.binarize_activations(np.zeros(2), tau)

    def test_single_tile_page(self):
        model = sae.build_model(tiny("REDNET"), seed=0)
        img = np.random.default_rng(0).random((16, 16))
        np.testing.assert_array_equal(sae.predict_document(model, img), model.predict(img[None])[0])

    def test_zero_model_page_is_background(self):
        model = zero_model(tiny("REDNET"))
        assert not sae.binarize_document(model, np.random.default_rng(2).random((30, 41)), 0.5).any()

    def test_repeatable_activations(self):
        img = np.random.default_rng(3).random((16, 16))
        a = sae.forward_window(sae.build_model(tiny("SWWAE"), seed=9), img)
        b = sae.forward_window(sae.build_model(tiny("SWWAE"), seed=9), img)
        np.testing.assert_array_equal(a, b)

    def test_ragged_page_shape(self):
        model = sae.build_model(tiny("CAE"), seed=0)
        img = np.random.default_rng(0).random((21, 35))
        act = sae.predict_document(model, img)
        assert act.shape == img.shape
        assert sae.binarize_document(model, img).shape == img.shape

    def test_tau_monotone(self):
        model = sae.build_model(tiny("SWWAE"), seed=6)
        img = np.random.default_rng(1).random((40, 24))
        masks = [sae.binarize_document(model, img, t) for t in (0.3, 0.5, 0.7)]
        assert np.all(masks[2] <= masks[1]) and np.all(masks[1] <= masks[0])

    def test_window_shape_checked(self):
        model = sae.build_model(tiny("CAE"), seed=0)
        with pytest.raises(ValueError):
            sae.forward_window(model, np.zeros((8, 8)))
        with pytest.raises(ValueError):
            model.predict(np.zeros((2, 16, 8)))


class TestCheckpoint:
    @pytest.mark.parametrize("kind", sae.KINDS)
    def test_round_trip_bit_identical(self, kind):
        model = sae.build_model(tiny(kind), seed=7)
        blob = sae.save_checkpoint(model)
        again = sae.load_checkpoint(blob)
        assert again.spec == model.spec
        x = np.random.default_rng(0).random((2, 16, 16))
        np.testing.assert_array_equal(again.predict(x), model.predict(x))
        assert sae.save_checkpoint(again) == blob

    def test_layout(self):
        spec = tiny("SWWAE")
        blob = sae.save_checkpoint(sae.build_model(spec))
        assert blob[:4] == b"SAEB"
        assert len(blob) == 13 + 4 * spec.parameter_count()

    def test_file_round_trip(self, tmp_path):
        model = sae.build_model(tiny("CAE"), seed=1)
        sae.write_checkpoint(model, tmp_path / "m.sae")
        assert sae.read_checkpoint(tmp_path / "m.sae").spec == model.spec

    def test_corruptions(self):
        blob = sae.save_checkpoint(sae.build_model(tiny("REDNET")))
        cases = {
            "magic": b"XXXX" + blob[4:],
            "version": blob[:4] + b"\x09\x00" + blob[6:],
            "topology code": blob[:6] + b"\x07" + blob[7:],
            "expected": blob[:-4],
            "header": blob[:5],
        }
        for needle, bad in cases.items():
            with pytest.raises(sae.CheckpointError, match=needle):
                sae.load_checkpoint(bad)

    def test_inconsistent_header(self):
        blob = bytearray(sae.save_checkpoint(sae.build_model(tiny("REDNET"))))
        blob[11] = 4  # kernel side 4 is even
        with pytest.raises(sae.CheckpointError, match="inconsistent"):
            sae.load_checkpoint(bytes(blob))
