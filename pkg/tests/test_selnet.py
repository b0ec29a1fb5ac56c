import numpy as np
import pytest

from acelab import data, metrics, nn, selnet
from acelab.errors import ConfigError
from acelab.rng import RngState

from oracles import central_diff, relative_error


def zero_selnet(in_dim=2, hidden=(8,), class_count=3):
    backbone, selector, feat, k = selnet.selnet_specs(in_dim, hidden, class_count)
    return selnet.SelNetParams(
        backbone_specs=backbone,
        backbone_weights=tuple(np.zeros((s.out_dim, s.in_dim)) for s in backbone),
        backbone_biases=tuple(np.zeros(s.out_dim) for s in backbone),
        pred_weight=np.zeros((k, feat)), pred_bias=np.zeros(k),
        selector_specs=selector,
        selector_weights=tuple(np.zeros((s.out_dim, s.in_dim)) for s in selector),
        selector_biases=tuple(np.zeros(s.out_dim) for s in selector),
        aux_weight=np.zeros((k, feat)), aux_bias=np.zeros(k),
        class_count=k,
    )


def random_selnet(seed, in_dim=3, hidden=(10, 8), class_count=3):
    backbone, selector, feat, k = selnet.selnet_specs(in_dim, hidden, class_count)
    gen = RngState(seed).generator()
    bw, bb = nn.init_stack(backbone, gen)
    sw, sb = nn.init_stack(selector, gen)
    a = np.sqrt(6.0 / (feat + k))
    return selnet.SelNetParams(
        backbone_specs=backbone, backbone_weights=bw, backbone_biases=bb,
        pred_weight=gen.uniform(-a, a, (k, feat)), pred_bias=gen.normal(0, 0.1, k),
        selector_specs=selector, selector_weights=sw, selector_biases=sb,
        aux_weight=gen.uniform(-a, a, (k, feat)), aux_bias=np.zeros(k),
        class_count=k,
    )


def noisy_blobs(n, seed, margin=4.0, noise=0.1):
    spec = data.DatasetSpec("blobs", n, classes=2, margin=margin, noise_rate=noise)
    return (data.gen_dataset(spec, seed, "train"),
            data.gen_dataset(spec, seed, "validation"),
            data.gen_dataset(spec, seed, "test"))


def quick_cfg(epochs=30, seed=7, c=0.7):
    return selnet.SelNetTrainConfig(
        sgd=nn.TrainConfig(0.1, epochs, 64, seed=seed, momentum=0.9),
        target_coverage=c)


class TestForward:
    def test_zero_weights_uniform_and_half(self):
        pred, sel, aux = selnet.selnet_forward(zero_selnet(), [0.4, -1.2])
        assert np.allclose(pred, [1 / 3] * 3, atol=1e-15)
        assert sel == 0.5
        assert np.allclose(aux, [1 / 3] * 3, atol=1e-15)

    def test_outputs_are_distributions(self):
        net = random_selnet(3)
        pred, sel, aux = selnet.selnet_forward(net, [0.1, 0.2, -0.3])
        assert abs(np.sum(pred) - 1.0) < 1e-12
        assert abs(np.sum(aux) - 1.0) < 1e-12
        assert 0.0 < sel < 1.0

    def test_selector_bounded_many_inputs(self):
        net = random_selnet(5)
        gen = np.random.default_rng(0)
        for _ in range(1000):
            _, sel, _ = selnet.selnet_forward(net, gen.normal(0, 3, 3))
            assert 0.0 < sel < 1.0


class TestGradients:
    def test_selector_gradient_matches_finite_differences(self):
        net = random_selnet(11)
        gen = np.random.default_rng(4)
        checked = 0
        while checked < 10:
            x = gen.normal(size=3)
            grad = selnet.selector_input_gradient(net, x)
            ref = central_diff(lambda v: selnet.selnet_forward(net, v)[1], x)
            if np.max(np.abs(ref)) < 1e-7:
                continue
            assert relative_error(grad, ref) < 1e-5
            checked += 1

    def test_pred_softmax_gradient_matches_finite_differences(self):
        net = random_selnet(13)
        gen = np.random.default_rng(8)
        for _ in range(10):
            x = gen.normal(size=3)
            grad = selnet.pred_softmax_input_gradient(net, x, 1)
            ref = central_diff(lambda v: float(selnet.selnet_forward(net, v)[0][1]), x)
            assert relative_error(grad, ref) < 1e-5


class TestTraining:
    def test_zero_epochs_returns_initialisation(self):
        train, _, _ = noisy_blobs(200, seed=1)
        a = selnet.selnet_train(2, [8], 2, train, quick_cfg(epochs=0, seed=3))
        b = selnet.selnet_train(2, [8], 2, train, quick_cfg(epochs=0, seed=3))
        assert np.array_equal(a.backbone_weights[0], b.backbone_weights[0])
        assert np.array_equal(a.pred_weight, b.pred_weight)

    def test_deterministic(self):
        train, _, _ = noisy_blobs(300, seed=2)
        a = selnet.selnet_train(2, [8], 2, train, quick_cfg(epochs=5, seed=9))
        b = selnet.selnet_train(2, [8], 2, train, quick_cfg(epochs=5, seed=9))
        for u, v in zip(a.backbone_weights + a.selector_weights,
                        b.backbone_weights + b.selector_weights):
            assert np.array_equal(u, v)

    def test_full_coverage_target(self):
        train, _, _ = noisy_blobs(600, seed=4, noise=0.05)
        net = selnet.selnet_train(2, [16], 2, train, quick_cfg(epochs=40, seed=5, c=1.0))
        sels = np.array([selnet.selnet_forward(net, x)[1] for x in train.features])
        assert float(np.mean(sels > 0.5)) >= 0.95

    def test_auxiliary_head_ignored_at_inference(self):
        # zeroing the aux head must change neither predictions nor confidence
        net = random_selnet(31)
        stripped = selnet.SelNetParams(
            backbone_specs=net.backbone_specs,
            backbone_weights=net.backbone_weights, backbone_biases=net.backbone_biases,
            pred_weight=net.pred_weight, pred_bias=net.pred_bias,
            selector_specs=net.selector_specs,
            selector_weights=net.selector_weights, selector_biases=net.selector_biases,
            aux_weight=np.zeros_like(net.aux_weight),
            aux_bias=np.zeros_like(net.aux_bias),
            class_count=net.class_count)
        gen = np.random.default_rng(2)
        for _ in range(10):
            x = gen.normal(size=3)
            pred_a, sel_a, _ = selnet.selnet_forward(net, x)
            pred_b, sel_b, _ = selnet.selnet_forward(stripped, x)
            assert np.array_equal(pred_a, pred_b)
            assert sel_a == sel_b

    def test_easy_points_pass_the_calibrated_threshold(self):
        # the coverage penalty saturates the selector near 1, so the top tail
        # is noisy; easy points should still mostly clear the threshold
        train, val, test = noisy_blobs(1200, seed=8, margin=6.0, noise=0.1)
        net = selnet.selnet_train(2, [16], 2, train, quick_cfg(epochs=120, seed=3, c=0.7))
        theta = selnet.calibrate_threshold(net, val, 0.7)
        sels = []
        for x, y in zip(test.features, test.labels):
            pred, sel, _ = selnet.selnet_forward(net, x)
            if abs(x[0]) > 1.2 and int(np.argmax(pred)) == y:
                sels.append(sel)
        assert len(sels) > 50
        assert float(np.median(sels)) > theta
        assert np.mean(np.array(sels) > theta) > 0.8

    def test_selector_improves_risk_at_partial_coverage(self):
        # moderate margin leaves genuinely ambiguous boundary mass to reject
        train, val, test = noisy_blobs(1500, seed=6, margin=3.0, noise=0.1)
        net = selnet.selnet_train(2, [16], 2, train, quick_cfg(epochs=60, seed=7, c=0.7))
        theta = selnet.calibrate_threshold(net, val, 0.7)
        items = []
        for i, (x, y) in enumerate(zip(test.features, test.labels)):
            pred, sel, _ = selnet.selnet_forward(net, x)
            items.append(metrics.make_item(i, int(y), int(np.argmax(pred)), sel, pred))
        full_risk = metrics.empirical_selective_risk(items, -np.inf)
        partial_risk = metrics.empirical_selective_risk(items, theta)
        assert partial_risk < full_risk


class TestCalibration:
    def make_net_with_scores(self, scores):
        """A selnet whose selector is the identity on feature 0 (pre-sigmoid)."""
        backbone = (nn.LayerSpec(2, 2, "relu"),)
        selector = (nn.LayerSpec(2, 1, "identity"),)
        # backbone passes |x| through (relu of +/- identity trick not needed:
        # scores are fed as positive feature values)
        return selnet.SelNetParams(
            backbone_specs=backbone,
            backbone_weights=(np.eye(2),), backbone_biases=(np.zeros(2),),
            pred_weight=np.zeros((2, 2)), pred_bias=np.zeros(2),
            selector_specs=selector,
            selector_weights=(np.array([[1.0, 0.0]]),), selector_biases=(np.zeros(1),),
            aux_weight=np.zeros((2, 2)), aux_bias=np.zeros(2),
            class_count=2,
        )

    def dataset_for(self, raw_scores):
        feats = np.column_stack([raw_scores, np.zeros(len(raw_scores))])
        return data.LabeledDataset(feats, np.zeros(len(raw_scores), dtype=int), "validation")

    def selector_values(self, net, ds):
        return np.array([selnet.selnet_forward(net, x)[1] for x in ds.features])

    def test_distinct_scores_midpoint(self):
        raw = np.linspace(0.1, 1.0, 10)  # distinct selector scores
        net = self.make_net_with_scores(raw)
        ds = self.dataset_for(raw)
        theta = selnet.calibrate_threshold(net, ds, 0.5)
        scores = self.selector_values(net, ds)
        assert float(np.mean(scores > theta)) == 0.5
        ordered = np.sort(scores)[::-1]
        assert ordered[5] <= theta < ordered[4]

    def test_full_coverage(self):
        raw = np.linspace(0.2, 0.9, 8)
        net = self.make_net_with_scores(raw)
        ds = self.dataset_for(raw)
        theta = selnet.calibrate_threshold(net, ds, 1.0)
        scores = self.selector_values(net, ds)
        assert theta < float(np.min(scores))
        assert float(np.mean(scores > theta)) == 1.0

    def test_tied_scores_stay_at_or_below_target(self):
        raw = np.array([0.9, 0.5, 0.5, 0.5, 0.1, 0.05])
        net = self.make_net_with_scores(raw)
        ds = self.dataset_for(raw)
        scores = self.selector_values(net, ds)
        for c in (0.3, 0.5, 0.6, 0.99):
            theta = selnet.calibrate_threshold(net, ds, c)
            cov = float(np.mean(scores > theta))
            assert cov <= c + 1e-12
            # exhaustive sweep: no threshold does better while staying <= c
            best = 0.0
            for cand in list(scores) + [0.0]:
                cand_cov = float(np.mean(scores > cand))
                if cand_cov <= c:
                    best = max(best, cand_cov)
            assert cov == pytest.approx(best, abs=0)

    def test_exhaustive_sweep_random_instances(self):
        gen = np.random.default_rng(17)
        for trial in range(20):
            n = int(gen.integers(1, 500))
            raw = gen.random(n).round(2) + 0.01
            net = self.make_net_with_scores(raw)
            ds = self.dataset_for(raw)
            scores = self.selector_values(net, ds)
            c = float(gen.uniform(0.05, 1.0))
            theta = selnet.calibrate_threshold(net, ds, c)
            cov = float(np.mean(scores > theta))
            best = 0.0
            for cand in list(scores) + [0.0]:
                cand_cov = float(np.mean(scores > cand))
                if cand_cov <= c:
                    best = max(best, cand_cov)
            assert cov == pytest.approx(best, abs=0)

    def test_bad_target_rejected(self):
        net = self.make_net_with_scores(np.array([0.5]))
        ds = self.dataset_for(np.array([0.5]))
        with pytest.raises(ConfigError):
            selnet.calibrate_threshold(net, ds, 0.0)
