import numpy as np
import pytest
from scipy.special import erf
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import Pipeline

from ssmscan.connector import (
    ConnectorVariant,
    ConnectorWeights,
    MlpWeights,
    ScanConnector,
    SwigluWeights,
    connector_forward,
    gelu,
    init_connector_weights,
    mlp_backward,
    mlp_project,
    multi_scan_forward,
    swiglu,
    swiglu_backward,
)
from ssmscan.errors import ConnectorError, ShapeError
from ssmscan.ssm import zero_mamba2_weights
from ssmscan.tensorio import load_tensor, save_bundle, load_bundle
from ssmscan.testkit import FiniteDiffSpec, finite_diff_grad
from ssmscan.vision import PatchGrid, Patchifier, StubEncoder


def small_weights(seed=7, d_v=12, d_llm=20):
    return init_connector_weights(d_v, d_llm, seed=seed, n_heads=2, state_size=4)


# ---------------------------------------------------------------------------
# SwiGLU
# ---------------------------------------------------------------------------


class TestSwiglu:
    def test_zero_input(self, rng):
        w = small_weights().swiglu
        assert np.all(swiglu(np.zeros((4, 12)), w) == 0.0)

    def test_saturated_gate_is_identity(self):
        # gate pre-activations pinned at the SiLU fixed point (silu(v*) = 1),
        # up and down projections identity: the gate multiplier is ~1, y ~= x
        from scipy.optimize import brentq

        v_star = brentq(lambda v: v / (1.0 + np.exp(-v)) - 1.0, 0.5, 3.0, xtol=1e-14)
        d = 5
        x = np.ones((6, d))
        w = SwigluWeights(
            w_gate=np.full((d, d), v_star / d),
            w_up=np.eye(d),
            w_down=np.eye(d),
        )
        assert np.max(np.abs(swiglu(x, w) - x)) < 1e-6

    def test_gradient_matches_finite_differences(self, rng):
        spec = FiniteDiffSpec(step=1e-5)
        for _ in range(20):
            x = rng.standard_normal((3, 5))
            w = SwigluWeights(
                w_gate=rng.standard_normal((5, 7)),
                w_up=rng.standard_normal((5, 7)),
                w_down=rng.standard_normal((7, 5)),
            )
            probe = rng.standard_normal((3, 5))
            grads = swiglu_backward(x, w, probe)
            for name, point in (("x", x), ("w_gate", w.w_gate),
                                ("w_up", w.w_up), ("w_down", w.w_down)):
                def scalar(v, name=name):
                    parts = {"x": x, "w_gate": w.w_gate, "w_up": w.w_up, "w_down": w.w_down}
                    parts[name] = v
                    ww = SwigluWeights(parts["w_gate"], parts["w_up"], parts["w_down"])
                    return float(np.sum(swiglu(parts["x"], ww) * probe))

                fd = finite_diff_grad(scalar, point, spec)
                scale = max(1.0, float(np.max(np.abs(fd))))
                assert np.max(np.abs(grads[name] - fd)) / scale < 1e-6

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            swiglu(rng.standard_normal((3, 4)), small_weights().swiglu)


# ---------------------------------------------------------------------------
# MLP projector
# ---------------------------------------------------------------------------


class TestMlpProject:
    def test_zero_weights_zero_output(self):
        w = MlpWeights(
            w1=np.zeros((5, 6)), b1=np.zeros(6),
            w2=np.zeros((6, 6)), b2=np.zeros(6),
            w3=np.zeros((6, 4)), b3=np.zeros(4),
        )
        out = mlp_project(np.ones((3, 5)), w)
        assert out.shape == (3, 4) and np.all(out == 0.0)

    def test_identity_layers_match_scalar_gelu_oracle(self, rng):
        d = 4
        w = MlpWeights(
            w1=np.eye(d), b1=np.zeros(d),
            w2=np.eye(d), b2=np.zeros(d),
            w3=np.eye(d), b3=np.zeros(d),
        )
        x = rng.standard_normal((5, d))
        # scalar oracle: g(v) = v/2 (1 + erf(v / sqrt 2)), applied twice
        g = lambda v: 0.5 * v * (1.0 + erf(v / np.sqrt(2.0)))
        assert np.max(np.abs(mlp_project(x, w) - g(g(x)))) < 1e-14

    def test_gradient_matches_finite_differences(self, rng):
        spec = FiniteDiffSpec(step=1e-5)
        for _ in range(20):
            x = rng.standard_normal((3, 5))
            w = MlpWeights(
                w1=rng.standard_normal((5, 6)), b1=rng.standard_normal(6),
                w2=rng.standard_normal((6, 6)), b2=rng.standard_normal(6),
                w3=rng.standard_normal((6, 4)), b3=rng.standard_normal(4),
            )
            probe = rng.standard_normal((3, 4))
            grads = mlp_backward(x, w, probe)
            names = ("x", "w1", "b1", "w2", "b2", "w3", "b3")
            for name in names:
                def scalar(v, name=name):
                    parts = {n: (x if n == "x" else getattr(w, n)) for n in names}
                    parts[name] = v
                    ww = MlpWeights(*(parts[n] for n in names[1:]))
                    return float(np.sum(mlp_project(parts["x"], ww) * probe))

                point = x if name == "x" else getattr(w, name)
                fd = finite_diff_grad(scalar, point, spec)
                scale = max(1.0, float(np.max(np.abs(fd))))
                assert np.max(np.abs(grads[name] - fd)) / scale < 1e-6


# ---------------------------------------------------------------------------
# Connector variants
# ---------------------------------------------------------------------------


class TestConnectorForward:
    @pytest.mark.parametrize("grid", [(4, 4), (8, 8), (27, 27)])
    @pytest.mark.parametrize("kind", ["mlp", "basic", "advanced"])
    def test_shape_contract(self, rng, grid, kind):
        rows, cols = grid
        w = small_weights()
        tokens = rng.standard_normal((rows * cols, 12))
        for scan in ("bsm", "csm"):
            out = connector_forward(tokens, rows, cols, ConnectorVariant(kind, scan), w)
            assert out.shape == (rows * cols, 20)

    def test_basic_with_zero_scan_weights_equals_mlp(self, rng):
        w = small_weights()
        zeroed = ConnectorWeights(
            mlp=w.mlp, mvss=zero_mamba2_weights(12, n_heads=2, state_size=4), swiglu=w.swiglu
        )
        tokens = rng.standard_normal((16, 12))
        basic = connector_forward(tokens, 4, 4, ConnectorVariant("basic"), zeroed)
        plain = connector_forward(tokens, 4, 4, ConnectorVariant("mlp"), zeroed)
        assert np.max(np.abs(basic - plain)) < 1e-12

    def test_bidirectional_reversal_equivariance(self, rng):
        w = small_weights()
        tokens = rng.standard_normal((16, 12))
        fwd = multi_scan_forward(tokens, 4, 4, "bsm", w.mvss)
        rev = multi_scan_forward(tokens[::-1], 4, 4, "bsm", w.mvss)
        assert np.max(np.abs(rev - fwd[::-1])) < 1e-10

    def test_single_token_grid_is_block_of_one(self, rng):
        w = small_weights()
        token = rng.standard_normal((1, 12))
        from ssmscan.ssm import mamba2_block

        out = multi_scan_forward(token, 1, 1, "csm", w.mvss)
        assert np.max(np.abs(out - mamba2_block(token, w.mvss))) < 1e-15

    def test_token_count_never_changes(self, rng):
        w = small_weights()
        for rows, cols in ((2, 8), (5, 3)):
            tokens = rng.standard_normal((rows * cols, 12))
            for kind in ("mlp", "basic", "advanced"):
                out = connector_forward(tokens, rows, cols, ConnectorVariant(kind), w)
                assert out.shape[0] == rows * cols

    def test_errors_carry_variant_context(self, rng):
        w = small_weights()
        with pytest.raises(ConnectorError) as err:
            connector_forward(rng.standard_normal((15, 12)), 4, 4,
                              ConnectorVariant("advanced", "csm"), w)
        assert "advanced" in str(err.value)
        assert err.value.__cause__ is not None

    def test_unknown_variant_rejected(self):
        with pytest.raises(ShapeError):
            ConnectorVariant("fancy")
        with pytest.raises(ShapeError):
            ConnectorVariant("basic", "zigzag")

    def test_frozen_regression_tensor(self, data_dir):
        tokens = np.random.default_rng(2024).standard_normal((16, 10))
        w = init_connector_weights(10, 12, seed=99, n_heads=2, state_size=4)
        out = connector_forward(tokens, 4, 4, ConnectorVariant("advanced", "csm"), w)
        frozen = load_tensor(data_dir / "advanced_connector_regression.mlmt")
        assert np.max(np.abs(out - frozen)) < 1e-10

    def test_weight_bundle_roundtrip(self, tmp_path, rng):
        w = small_weights()
        save_bundle(tmp_path / "connector", w.to_arrays())
        back = ConnectorWeights.from_arrays(load_bundle(tmp_path / "connector"))
        tokens = rng.standard_normal((16, 12))
        for kind in ("mlp", "basic", "advanced"):
            a = connector_forward(tokens, 4, 4, ConnectorVariant(kind), w)
            b = connector_forward(tokens, 4, 4, ConnectorVariant(kind), back)
            assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Estimator API
# ---------------------------------------------------------------------------


class TestScanConnectorEstimator:
    def test_requires_fit(self, rng):
        with pytest.raises(NotFittedError):
            ScanConnector().transform(rng.standard_normal((4, 6)))

    def test_fit_transform_on_grid(self, rng):
        grid = PatchGrid(4, 4, 2, rng.standard_normal((16, 10)))
        est = ScanConnector(variant="basic", scan="csm", out_dim=8, seed=5,
                            n_heads=2, state_size=4)
        out = est.fit(grid).transform(grid)
        assert isinstance(out, PatchGrid) and out.tokens.shape == (16, 8)

    def test_array_input_with_declared_grid(self, rng):
        x = rng.standard_normal((12, 10))
        est = ScanConnector(variant="advanced", out_dim=6, seed=5, grid_rows=3,
                            grid_cols=4, n_heads=2, state_size=4)
        out = est.fit(x).transform(x)
        assert out.shape == (12, 6)

    def test_deterministic_given_seed(self, rng):
        x = rng.standard_normal((16, 10))
        mk = lambda: ScanConnector(out_dim=6, seed=42, grid_rows=4, grid_cols=4,
                                   n_heads=2, state_size=4)
        assert np.array_equal(mk().fit(x).transform(x), mk().fit(x).transform(x))

    def test_clone_and_get_params(self):
        est = ScanConnector(variant="mlp", out_dim=10, seed=3)
        twin = clone(est)
        assert twin.get_params()["out_dim"] == 10
        assert twin.get_params()["variant"] == "mlp"

    def test_full_pipeline(self, rng):
        pixels = rng.random((16, 16, 1))
        pipe = Pipeline([
            ("patchify", Patchifier(patch_size=4)),
            ("encode", StubEncoder(out_dim=10, seed=2)),
            ("connect", ScanConnector(variant="advanced", out_dim=8, seed=3,
                                      n_heads=2, state_size=4)),
        ])
        out = pipe.fit_transform(pixels)
        assert isinstance(out, PatchGrid)
        assert out.tokens.shape == (16, 8)

    def test_width_change_rejected(self, rng):
        est = ScanConnector(out_dim=6, seed=1, grid_rows=4, grid_cols=4,
                            n_heads=2, state_size=4)
        est.fit(rng.standard_normal((16, 10)))
        with pytest.raises(ShapeError):
            est.transform(rng.standard_normal((16, 11)))
