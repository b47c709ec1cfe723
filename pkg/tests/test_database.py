"""
Report store
"""
from graphkernel.database import get_report_store
from graphkernel.models import EstimatorResult, EvaluationReport, ExperimentConfig, TrialFailure


def make_report(name="stored", nmse=(0.2, None)):
    config = ExperimentConfig.model_validate({
        "name": name,
        "estimators": [{"kind": "krr", "kernel": {"kind": "diffusion", "sigma2": 1.0}}],
    })
    failures = [
        TrialFailure(trial=i, error_type="SingularSystem", message="boom")
        for i, v in enumerate(nmse) if v is None
    ]
    scored = [v for v in nmse if v is not None]
    result = EstimatorResult(
        estimator="krr",
        kind="krr",
        sample_size=10,
        trial_nmse=list(nmse),
        mean_nmse=sum(scored) / len(scored) if scored else None,
        failures=failures,
    )
    return EvaluationReport(name=name, seed=1, trials=len(nmse), results=[result], config=config)


class TestReportStore:

    def test_save_and_load(self, report_db):
        store = get_report_store()
        report_id = store.save(make_report())
        loaded = store.get_report(report_id)
        assert loaded.name == "stored"
        assert loaded.results[0].trial_nmse == [0.2, None]

    def test_trial_rows(self, report_db):
        store = get_report_store()
        report_id = store.save(make_report())
        rows = store.trial_results(report_id)
        assert [r["trial"] for r in rows] == [0, 1]
        assert rows[0]["nmse"] == 0.2 and rows[0]["error"] is None
        assert rows[1]["nmse"] is None
        assert rows[1]["error"] == "SingularSystem: boom"

    def test_listing_newest_first(self, report_db):
        store = get_report_store()
        first = store.save(make_report("first"))
        second = store.save(make_report("second"))
        listed = store.list_reports(limit=10)
        assert [r["id"] for r in listed[:2]] == [second, first]
        assert listed[0]["best_estimator"] == "krr"

    def test_all_failed_report(self, report_db):
        store = get_report_store()
        report_id = store.save(make_report("failed", nmse=(None,)))
        summary = [r for r in store.list_reports() if r["id"] == report_id][0]
        assert summary["best_estimator"] is None

    def test_unknown_report(self, report_db):
        assert get_report_store().get_report(9999) is None
