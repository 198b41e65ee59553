"""
Tests for accuracy reports and the fixed-width result table.
"""

import math

import pytest

from core.heads import total_loss
from core.orchestrator.metrics import MetricsReport, epoch_mean, format_accuracy, format_table, parse_table

pytestmark = pytest.mark.unit


class TestMetricsReport:

    def test_split_by_answer_type(self):
        report = MetricsReport.from_outcomes(
            correct=[True, False, True, True, False],
            is_open=[True, True, False, False, False],
        )
        assert report.acc_open == 0.5
        assert report.acc_closed == pytest.approx(2 / 3)
        assert report.acc_overall == 0.6
        assert (report.open_count, report.closed_count) == (2, 3)

    def test_no_open_samples_is_undefined(self):
        report = MetricsReport.from_outcomes([True, False], [False, False])
        assert report.acc_open is None
        assert report.acc_overall == report.acc_closed == 0.5
        assert "acc_open=n/a" in report.to_key_values()

    def test_empty(self):
        report = MetricsReport.from_outcomes([], [])
        assert report.acc_open is report.acc_closed is report.acc_overall is None

    def test_format_accuracy(self):
        assert format_accuracy(None) == "n/a"
        assert format_accuracy(0.83333) == "83.33"
        assert format_accuracy(1.0) == "100.00"


class TestTable:

    def test_parse_inverts_format(self):
        rows = [
            ("full", MetricsReport(0.75, 0.5, 0.625)),
            ("w/o CMM", MetricsReport(None, 1.0, 1.0)),
        ]
        text = format_table(rows)
        assert text.splitlines()[0].split("|")[0].strip() == "method"
        parsed = parse_table(text)
        assert parsed["full"] == {"acc_open": 0.75, "acc_closed": 0.5, "acc_overall": 0.625}
        assert parsed["w/o CMM"]["acc_open"] is None

    def test_malformed_row(self):
        text = format_table([("full", MetricsReport(0.5, 0.5, 0.5))]) + "\nbroken | 1.00"
        with pytest.raises(ValueError, match="malformed"):
            parse_table(text)


class TestEpochMean:

    def test_mean_per_term(self):
        trace = [total_loss(1.0, 2.0, 3.0, 0.2, 0.3), total_loss(3.0, 4.0, 5.0, 0.2, 0.3)]
        means = epoch_mean(trace)
        assert means["l_cls"] == 2.0 and means["l_vtc"] == 3.0 and means["l_aux"] == 4.0
        assert means["total"] == pytest.approx(2.0 + 0.2 * 3.0 + 0.3 * 4.0)

    def test_empty_trace_is_nan(self):
        assert all(math.isnan(v) for v in epoch_mean([]).values())
