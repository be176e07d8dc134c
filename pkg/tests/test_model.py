import io
import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from sdlearn.errors import DimensionError, FormatError, SdlError
from sdlearn.model import (
    BILINEAR,
    LINEAR,
    MODEL_MAGIC,
    DecisionParams,
    Dictionary,
    Hyperparams,
    SdlModel,
    affine_reduction,
    affine_reduction_batch,
    decision_values,
    load_model,
    model_from_bytes,
    model_to_bytes,
    residual_cost,
    residual_cost_grad,
    save_model,
    softmax_cost,
    softmax_cost_grad,
)

from oracles import central_gradient, naive_decision_values, naive_softmax_cost

# log(e^-2 + 1 + e^-1), evaluated once with mpmath at 30 digits
SOFTMAX_1_3_2 = 0.407605964444380


def random_model(rng, variant=LINEAR, n=5, k=4, p=3):
    atoms = rng.standard_normal((n, k))
    atoms /= np.linalg.norm(atoms, axis=0)
    shape = (k, p) if variant == LINEAR else (p, n, k)
    params = DecisionParams(variant, rng.standard_normal(shape), rng.standard_normal(p))
    hyper = Hyperparams.from_kappa(0.7, 0.15, lambda2=0.01, k=k, mu_schedule=(0.0, 0.5, 1.0))
    trace = {"chosen_mu": 0.5, "objective": [3.0, 2.0]}
    return SdlModel(Dictionary(atoms), params, hyper, list(range(p)), trace)


finite = st.floats(-50, 50, allow_nan=False)


class TestSoftmax:
    def test_equal_scores_give_log_p(self):
        assert softmax_cost(0, [0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-12)
        for p in (2, 3, 7):
            assert softmax_cost(p - 1, np.full(p, 4.2)) == pytest.approx(math.log(p), abs=1e-12)

    def test_known_value(self):
        assert softmax_cost(1, [1.0, 3.0, 2.0]) == pytest.approx(SOFTMAX_1_3_2, abs=1e-12)
        assert softmax_cost(1, [1.0, 3.0, 2.0]) == pytest.approx(
            naive_softmax_cost(1, [1.0, 3.0, 2.0]), abs=1e-14)

    def test_gradient_two_class(self):
        np.testing.assert_allclose(softmax_cost_grad(0, [0.0, 0.0]), [-0.5, 0.5], atol=1e-15)

    def test_overflow_safe(self):
        assert softmax_cost(0, [1000.0, 0.0]) == pytest.approx(0.0, abs=1e-300)
        assert softmax_cost(1, [1000.0, 0.0]) == pytest.approx(1000.0)
        assert np.all(np.isfinite(softmax_cost_grad(1, [1e4, -1e4, 0.0])))

    def test_errors(self):
        with pytest.raises(IndexError):
            softmax_cost(2, [0.0, 1.0])
        with pytest.raises(IndexError):
            softmax_cost(-1, [0.0, 1.0])
        with pytest.raises(SdlError):
            softmax_cost(0, [0.0, np.nan])
        with pytest.raises(SdlError):
            softmax_cost_grad(0, [np.inf, 0.0])

    @given(st.integers(2, 6).flatmap(
        lambda p: st.tuples(st.integers(0, p - 1), hnp.arrays(np.float64, p, elements=finite))))
    def test_nonnegative_and_zero_sum_gradient(self, case):
        i, s = case
        assert softmax_cost(i, s) >= 0.0
        assert abs(softmax_cost_grad(i, s).sum()) <= 1e-12

    @given(st.integers(2, 6).flatmap(
        lambda p: st.tuples(st.integers(0, p - 1), hnp.arrays(np.float64, p, elements=finite))),
        st.floats(-100, 100))
    def test_shift_invariance(self, case, c):
        i, s = case
        assert softmax_cost(i, s + c) == pytest.approx(softmax_cost(i, s), abs=1e-12)

    def test_log_p_also_reached_by_unequal_scores(self):
        # the converse of the equal-scores case fails: e^a + e^-b = 2 gives log 3 too
        a = 0.5
        b = -math.log(2 - math.exp(a))
        assert softmax_cost(0, [0.0, a, -b]) == pytest.approx(math.log(3), abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            p = int(rng.choice([2, 3, 5]))
            i = int(rng.integers(p))
            s = rng.standard_normal(p) * 2
            fd = central_gradient(lambda z: softmax_cost(i, z), s, h=1e-5)
            an = softmax_cost_grad(i, s)
            assert np.linalg.norm(fd - an) <= 1e-5 * max(np.linalg.norm(an), 1e-8)

    def test_residual_cost_is_cost_of_negated_residuals(self):
        r = np.array([0.3, 1.2, -0.4])
        assert residual_cost(2, r) == pytest.approx(softmax_cost(2, -r))
        fd = central_gradient(lambda z: residual_cost(0, z), r)
        np.testing.assert_allclose(residual_cost_grad(0, r), fd, atol=1e-8)
        # smaller own residual means smaller cost
        assert residual_cost(0, [0.1, 1.0]) < residual_cost(1, [0.1, 1.0])


class TestDecisionValues:
    def test_linear_zero_params(self):
        params = DecisionParams.zeros(LINEAR, 4, 3, 2)
        np.testing.assert_array_equal(decision_values(np.ones(4), np.ones(3), params), [0, 0])

    def test_bilinear_basis_vectors_select_entry(self):
        n, k, p = 3, 3, 2
        W = np.stack([np.eye(n, k) * (q + 2) for q in range(p)])
        params = DecisionParams(BILINEAR, W, np.zeros(p))
        g = decision_values(np.eye(n)[0], np.eye(k)[0], params)
        np.testing.assert_array_equal(g, [W[0, 0, 0], W[1, 0, 0]])

    @pytest.mark.parametrize("variant", [LINEAR, BILINEAR])
    def test_matches_triple_loop(self, variant):
        rng = np.random.default_rng(2)
        for _ in range(20):
            model = random_model(rng, variant)
            x, a = rng.standard_normal(5), rng.standard_normal(4)
            ref = naive_decision_values(x, a, variant, model.params.weights, model.params.biases)
            np.testing.assert_allclose(decision_values(x, a, model.params), ref, atol=1e-12)

    def test_dimension_errors(self):
        params = DecisionParams.zeros(BILINEAR, 4, 3, 2)
        with pytest.raises(DimensionError):
            decision_values(np.ones(5), np.ones(3), params)
        with pytest.raises(DimensionError):
            decision_values(np.ones(4), np.ones(2), params)


class TestAffineReduction:
    def test_linear_is_verbatim(self):
        rng = np.random.default_rng(3)
        params = random_model(rng).params
        A, b = affine_reduction(rng.standard_normal(5), params)
        np.testing.assert_array_equal(A, params.weights)
        np.testing.assert_array_equal(b, params.biases)

    def test_bilinear_zero_signal(self):
        params = random_model(np.random.default_rng(4), BILINEAR).params
        A, b = affine_reduction(np.zeros(5), params)
        np.testing.assert_array_equal(A, 0.0)
        np.testing.assert_array_equal(b, params.biases)

    def test_identity_on_random_bilinear_instances(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            params = random_model(rng, BILINEAR).params
            x, a = rng.standard_normal(5), rng.standard_normal(4)
            A, b = affine_reduction(x, params)
            assert A.shape == (4, 3)
            np.testing.assert_allclose(A.T @ a + b, decision_values(x, a, params), atol=1e-12)

    def test_batch_agrees(self):
        rng = np.random.default_rng(6)
        params = random_model(rng, BILINEAR).params
        X = rng.standard_normal((7, 5))
        stack = affine_reduction_batch(X, params)
        for j in range(7):
            np.testing.assert_allclose(stack[j], affine_reduction(X[j], params)[0], atol=1e-14)
        lin = random_model(rng, LINEAR).params
        assert affine_reduction_batch(X, lin).shape == (1, 4, 3)


class TestTypes:
    def test_dictionary_validation(self):
        Dictionary(np.eye(3))
        with pytest.raises(SdlError):
            Dictionary(np.eye(3) * 1.01)
        with pytest.raises(SdlError):
            Dictionary(np.array([[np.nan]]))
        with pytest.raises(DimensionError):
            Dictionary(np.ones(3))

    def test_params_validation(self):
        with pytest.raises(SdlError):
            DecisionParams(LINEAR, np.zeros((3, 1)), np.zeros(1))
        with pytest.raises(SdlError):
            DecisionParams(LINEAR, np.full((3, 2), np.inf), np.zeros(2))
        with pytest.raises(SdlError):
            DecisionParams("quadratic", np.zeros((3, 2)), np.zeros(2))
        with pytest.raises(DimensionError):
            DecisionParams(LINEAR, np.zeros((3, 2)), np.zeros(3))

    def test_hyper_kappa_consistency(self):
        h = Hyperparams.from_kappa(2.0, 0.15)
        assert abs(h.lambda1 - 0.3) <= 1e-12
        assert h.kappa == 0.15
        with pytest.raises(SdlError):
            Hyperparams(1.0, 0.2, kappa=0.15)
        with pytest.raises(SdlError):
            Hyperparams(1.0, 0.15, mu_schedule=(0.5, 0.2))
        with pytest.raises(SdlError):
            Hyperparams(1.0, 0.15, mu_schedule=(0.0, 1.5))
        with pytest.raises(SdlError):
            Hyperparams(-1.0, 0.15)

    def test_hyper_scaling_keeps_kappa(self):
        h = Hyperparams.from_kappa(1.0, 0.15).scaled(7.0)
        assert h.lambda0 == 7.0
        assert h.lambda1 / h.lambda0 == pytest.approx(0.15)

    def test_model_dimension_agreement(self):
        rng = np.random.default_rng(7)
        m = random_model(rng)
        with pytest.raises(DimensionError):
            SdlModel(m.dictionary, DecisionParams.zeros(LINEAR, 5, 3, 3), m.hyper, [0, 1, 2])
        with pytest.raises(DimensionError):
            SdlModel(m.dictionary, m.params, m.hyper, [0, 1])


class TestPersistence:
    @pytest.mark.parametrize("variant", [LINEAR, BILINEAR])
    def test_round_trip_bit_exact(self, variant, tmp_path):
        model = random_model(np.random.default_rng(8), variant)
        path = tmp_path / "m.bin"
        save_model(model, str(path))
        back = load_model(str(path))
        np.testing.assert_array_equal(back.dictionary.atoms, model.dictionary.atoms)
        np.testing.assert_array_equal(back.params.weights, model.params.weights)
        np.testing.assert_array_equal(back.params.biases, model.params.biases)
        assert back.params.variant == variant
        assert back.hyper == model.hyper
        assert back.class_labels == model.class_labels
        assert back.trace == model.trace
        assert model_to_bytes(back) == model_to_bytes(model)

    def test_layout(self):
        model = random_model(np.random.default_rng(9))
        data = model_to_bytes(model)
        assert data[:8] == MODEL_MAGIC
        (length,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + length])
        assert (header["n"], header["k"], header["p"]) == (5, 4, 3)
        body = data[16 + length:]
        atoms = np.frombuffer(body[:5 * 4 * 8], dtype="<f8").reshape((5, 4), order="F")
        np.testing.assert_array_equal(atoms, model.dictionary.atoms)

    def test_truncated_stream(self):
        data = model_to_bytes(random_model(np.random.default_rng(10)))
        for cut in (4, 12, 20, len(data) - 1):
            with pytest.raises(FormatError):
                model_from_bytes(data[:cut])

    def test_bad_magic_and_version(self):
        data = model_to_bytes(random_model(np.random.default_rng(11)))
        with pytest.raises(FormatError, match="magic"):
            model_from_bytes(b"XXXXXXXX" + data[8:])
        with pytest.raises(FormatError, match="version"):
            model_from_bytes(MODEL_MAGIC[:-1] + b"9" + data[8:])

    def test_trailing_bytes_rejected(self):
        data = model_to_bytes(random_model(np.random.default_rng(12)))
        with pytest.raises(FormatError):
            model_from_bytes(data + b"\0")

    def test_declared_k_mismatch_names_field(self):
        data = model_to_bytes(random_model(np.random.default_rng(13)))
        (length,) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + length])
        header["k"] = 6
        text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        bad = MODEL_MAGIC + struct.pack("<Q", len(text)) + text + data[16 + length:]
        with pytest.raises(DimensionError, match="k"):
            load_model(io.BytesIO(bad))
