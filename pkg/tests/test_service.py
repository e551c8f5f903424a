import json

import pytest
from fastapi.testclient import TestClient

from vacl.service import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app(), raise_server_exceptions=False)


def tiny_doc(out_dir, **overrides):
    doc = {
        "model": {"widths": [6], "blocks": [1], "classes": 2},
        "dataset": {"kind": "synthetic", "classes": 2, "features": 2,
                    "train_size": 96, "test_size": 48, "seed": 1},
        "train": {"epochs": 3, "batch_size": 32, "lr": 0.05, "seed": 0},
        "penalty": {"kind": "vacl", "lambda": 1e-3},
        "finetune": {"epochs": 1},
        "out_dir": str(out_dir),
    }
    doc.update(overrides)
    return doc


class TestEndpoints:
    def test_health(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok"}

    def test_train_then_prune_flow(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "run")
        response = client.post("/train", json={"config": doc})
        assert response.status_code == 200
        body = response.json()
        assert body["ok"] is True
        assert body["artifacts"]["checkpoint"] == "checkpoint.vacl"
        assert (tmp_path / "run" / "checkpoint.vacl").exists()

        response = client.post("/prune", json={"config": doc, "tau": 0.0})
        assert response.status_code == 200
        summary = response.json()["summary"]
        assert summary["params_before"] == summary["params_after"]

    def test_pipeline_endpoint(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "pipe", pipeline={
            "stages": [{"penalty": {"kind": "l1", "lambda": 1e-3}},
                       {"penalty": {"kind": "vacl", "lambda": 1e-3}}],
            "between": {"epochs": 1, "penalty": "none"},
        })
        response = client.post("/pipeline", json={"config": doc})
        assert response.status_code == 200
        report = json.loads((tmp_path / "pipe" / "pipeline_report.json").read_text())
        assert [s["stage"] for s in report["stages"]] == [1, 2]

    def test_contour_endpoint(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "contour",
                       contour={"kind": "variance_aware", "resolution": 11})
        response = client.post("/contour", json={"config": doc})
        assert response.status_code == 200
        assert (tmp_path / "contour" / "contour.csv").exists()

    def test_heatmap_endpoint(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "hm")
        assert client.post("/train", json={"config": doc}).status_code == 200
        response = client.post("/heatmap", json={"config": doc, "group": 0})
        assert response.status_code == 200
        assert response.json()["summary"]["layers"] == 3

    def test_sweep_tau_endpoint(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "st", sweep={"tau_grid": [0.0, 1e-4]})
        assert client.post("/train", json={"config": doc}).status_code == 200
        response = client.post("/sweep/tau", json={"config": doc})
        assert response.status_code == 200
        assert (tmp_path / "st" / "sweep_tau.csv").exists()

    def test_sweep_lambda_endpoint(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "sl", sweep={"lambda_grid": [1e-3],
                                               "seeds": [0, 1]})
        doc["finetune"]["epochs"] = 0
        response = client.post("/sweep/lambda", json={"config": doc})
        assert response.status_code == 200
        rows = (tmp_path / "sl" / "sweep_lambda.csv").read_text().splitlines()
        assert len(rows) == 3

    def test_zero_epoch_finetune_reports_null_accuracy(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "ft0", finetune={"epochs": 0})
        assert client.post("/train", json={"config": doc}).status_code == 200
        response = client.post("/finetune", json={"config": doc})
        assert response.status_code == 200
        assert response.json()["summary"]["final_test_accuracy"] is None

    def test_seed_override_changes_run(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "s0")
        a = client.post("/train", json={"config": doc}).json()
        doc2 = tiny_doc(tmp_path / "s1")
        b = client.post("/train", json={"config": doc2, "seed": 5}).json()
        assert a["summary"]["params"] == b["summary"]["params"]
        ck_a = (tmp_path / "s0" / "checkpoint.vacl").read_bytes()
        ck_b = (tmp_path / "s1" / "checkpoint.vacl").read_bytes()
        assert ck_a != ck_b


class TestErrorEnvelope:
    def test_unknown_config_key_is_config_error(self, client, tmp_path):
        doc = tiny_doc(tmp_path)
        doc["bogus"] = True
        response = client.post("/train", json={"config": doc})
        assert response.status_code == 422
        assert response.json()["error"]["code"] == "config"

    def test_missing_dataset_is_io_error(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "io", dataset={
            "kind": "csv", "train_path": str(tmp_path / "a.csv"),
            "test_path": str(tmp_path / "b.csv")})
        response = client.post("/train", json={"config": doc})
        assert response.status_code == 404
        assert response.json()["error"]["code"] == "io"
        assert not (tmp_path / "io").exists()

    def test_numeric_abort_is_numeric_error(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "nan")
        doc["train"]["lr"] = 1e12
        response = client.post("/train", json={"config": doc})
        assert response.status_code == 500
        assert response.json()["error"]["code"] == "numeric"

    def test_unknown_heatmap_group_is_config_error(self, client, tmp_path):
        doc = tiny_doc(tmp_path / "hg")
        assert client.post("/train", json={"config": doc}).status_code == 200
        response = client.post("/heatmap", json={"config": doc, "group": 7})
        assert response.status_code == 422
        assert response.json()["error"]["code"] == "config"

    def test_malformed_request_body(self, client):
        response = client.post("/train", json={"not_config": 1})
        assert response.status_code == 422
        assert response.json()["error"]["code"] == "config"
