import numpy as np
import pytest

from ssmscan.bench import (
    AttentionBaselineWeights,
    BenchRecord,
    attention_forward,
    eval_avg,
    init_attention_weights,
    measure_forward,
    records_from_csv,
    records_to_csv,
    scaling_slope,
    slopes_ok,
    sweep_lengths,
)
from ssmscan.errors import DomainError
from ssmscan.testkit import perturbation_causality_gap


class TestEvalAvg:
    def test_table_row_1_47s(self):
        # 256 tokens over 1.47 s gives 174.1 tokens/s. The reference row
        # these figures come from prints 171 for the same total; eval_avg
        # returns raw division and never reconciles that rounding.
        assert abs(eval_avg(256, 1.47) - 174.1) < 0.1

    def test_table_row_6_45s(self):
        assert abs(eval_avg(256, 6.45) - 39.7) < 0.1

    def test_zero_tokens(self):
        assert eval_avg(0, 2.0) == 0.0

    def test_nonpositive_time(self):
        with pytest.raises(DomainError):
            eval_avg(10, 0.0)
        with pytest.raises(DomainError):
            eval_avg(10, -1.0)


class TestAttention:
    def test_single_position_is_projected_value(self, rng):
        w = init_attention_weights(8, rng, n_heads=2)
        x = rng.standard_normal((1, 8))
        expect = (x @ w.wv) @ w.wo
        assert np.max(np.abs(attention_forward(x, w) - expect)) < 1e-12

    def test_uniform_keys_average_prefix(self, rng):
        # zero query projection makes all scores equal: row t averages values 0..t
        d = 6
        w = AttentionBaselineWeights(
            n_heads=1, wq=np.zeros((d, d)), wk=rng.standard_normal((d, d)),
            wv=np.eye(d), wo=np.eye(d),
        )
        x = rng.standard_normal((5, d))
        out = attention_forward(x, w)
        for t in range(5):
            assert np.max(np.abs(out[t] - x[: t + 1].mean(axis=0))) < 1e-12

    def test_causality_probe(self, rng):
        w = init_attention_weights(8, rng, n_heads=2)
        x = rng.standard_normal((12, 8))
        for pos in (1, 5, 11):
            gap = perturbation_causality_gap(lambda s: attention_forward(s, w), x, pos, rng)
            assert gap == 0.0

    def test_head_count_must_divide(self, rng):
        with pytest.raises(Exception):
            init_attention_weights(10, rng, n_heads=3)


class TestScalingSlope:
    def synthetic(self, exponent, coeff=1e-6):
        return [
            BenchRecord("ssm", L, 64, 5, coeff * L**exponent, coeff * L**exponent,
                        coeff * L**exponent, L / (coeff * L**exponent))
            for L in (256, 512, 1024, 2048, 4096)
        ]

    def test_linear_times_give_slope_one(self):
        assert abs(scaling_slope(self.synthetic(1.0)) - 1.0) < 1e-9

    def test_quadratic_times_give_slope_two(self):
        assert abs(scaling_slope(self.synthetic(2.0)) - 2.0) < 1e-9

    def test_invariant_to_time_rescaling(self):
        base = self.synthetic(1.37)
        scaled = [
            BenchRecord(r.model_kind, r.seq_len, r.dim, r.repeats,
                        7.0 * r.t_min, 7.0 * r.t_median, 7.0 * r.t_max, r.tokens_per_sec)
            for r in base
        ]
        assert abs(scaling_slope(base) - scaling_slope(scaled)) < 1e-12

    def test_needs_four_lengths(self):
        with pytest.raises(DomainError):
            scaling_slope(self.synthetic(1.0)[:3])

    def test_needs_8x_span(self):
        records = [
            BenchRecord("ssm", L, 64, 5, 1e-3, 1e-3, 1e-3, L / 1e-3)
            for L in (256, 320, 400, 512)
        ]
        with pytest.raises(DomainError):
            scaling_slope(records)

    def test_mixed_kinds_rejected(self):
        records = self.synthetic(1.0)
        mixed = records + [
            BenchRecord("attention", 256, 64, 5, 1e-3, 1e-3, 1e-3, 256 / 1e-3)
        ]
        with pytest.raises(DomainError):
            scaling_slope(mixed)

    def test_slopes_ok_rejects_quadratic_ssm(self):
        quadratic_ssm = self.synthetic(2.0)
        attn = [
            BenchRecord("attention", r.seq_len, r.dim, r.repeats,
                        r.t_min, r.t_median, r.t_max, r.tokens_per_sec)
            for r in self.synthetic(2.0)
        ]
        assert not slopes_ok(quadratic_ssm + attn)
        linear_ssm = self.synthetic(1.0)
        assert slopes_ok(linear_ssm + attn)


class TestRecordsAndCsv:
    def test_record_invariants(self):
        with pytest.raises(DomainError):
            BenchRecord("ssm", 64, 64, 5, 2.0, 1.0, 3.0, 64.0)
        with pytest.raises(DomainError):
            BenchRecord("rnn", 64, 64, 5, 1.0, 1.0, 1.0, 64.0)

    def test_csv_roundtrip_lossless(self, rng):
        records = []
        for i, kind in enumerate(("ssm", "attention")):
            times = np.sort(np.abs(rng.standard_normal(3))) + 1e-5
            records.append(
                BenchRecord(kind, 256 << i, 64, 5, float(times[0]), float(times[1]),
                            float(times[2]), (256 << i) / float(times[1]))
            )
        back = records_from_csv(records_to_csv(records))
        assert back == records

    def test_csv_header_checked(self):
        with pytest.raises(DomainError):
            records_from_csv("bogus,header\n1,2\n")

    def test_sweep_lengths(self):
        assert sweep_lengths(256, 8192) == [256, 512, 1024, 2048, 4096, 8192]
        assert sweep_lengths(16, 16) == [16]
        with pytest.raises(DomainError):
            sweep_lengths(0, 16)


class TestMeasureForward:
    def test_record_contract(self):
        rec = measure_forward("ssm", 64, 16, repeats=3)
        assert rec.repeats == 3
        assert rec.t_min <= rec.t_median <= rec.t_max
        assert rec.tokens_per_sec == eval_avg(64, rec.t_median)

    def test_repeats_floor(self):
        with pytest.raises(DomainError):
            measure_forward("ssm", 64, 16, repeats=2)

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            measure_forward("transformer", 64, 16, repeats=3)

    def test_small_sweep_yields_record_per_cell(self):
        from ssmscan.bench import run_sweep

        records = run_sweep(min_len=16, max_len=128, dim=16, repeats=3)
        assert len(records) == 8  # 2 kinds x 4 lengths
        assert records_from_csv(records_to_csv(records)) == records

    @pytest.mark.slow
    def test_attention_doubling_at_least_doubles_time(self):
        t1024 = measure_forward("attention", 1024, 64, repeats=5).t_median
        t2048 = measure_forward("attention", 2048, 64, repeats=5).t_median
        assert t2048 >= 2.0 * t1024

    @pytest.mark.slow
    def test_ssm_doubling_stays_linear(self):
        # measured deep in the linear regime where python-loop cost dominates
        t4096 = measure_forward("ssm", 4096, 64, repeats=5).t_median
        t8192 = measure_forward("ssm", 8192, 64, repeats=5).t_median
        assert 1.6 <= t8192 / t4096 <= 2.6
