"""CLI smoke tests: every verb exercised end to end on tiny inputs."""

import json

import pytest

from aidkit.cli import main, parse_epsilon_grid


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    store = root / "models"
    rc = main(["train", "--dataset", "pattern:n=120,seed=1,size=8,classes=4",
               "--structure", "tinycnn", "--epochs", "6", "--lr", "0.05",
               "--batch-size", "32", "--model-id", "cli_m0",
               "--store", str(store)])
    assert rc == 0
    return root, store


class TestGrid:
    def test_comma_list(self):
        assert parse_epsilon_grid("0.01,0.05") == [0.01, 0.05]

    def test_log_range(self):
        g = parse_epsilon_grid("0.01:1:log:3")
        assert g[0] == pytest.approx(0.01) and g[-1] == pytest.approx(1.0)
        assert len(g) == 3

    def test_linear_range(self):
        g = parse_epsilon_grid("0:1:lin:5")
        assert g == pytest.approx([0, 0.25, 0.5, 0.75, 1.0])


class TestVerbs:
    def test_run_ifgsm_and_save(self, trained):
        root, store = trained
        out = root / "report.json"
        pdir = root / "perts"
        rc = main(["run", "--model", "cli_m0",
                   "--dataset", "pattern:n=20,seed=2,size=8,classes=4",
                   "--method", "ifgsm", "--epsilon", "0.05", "--iters", "3",
                   "--direction", "aid", "--out", str(out),
                   "--save-perturbations", str(pdir), "--store", str(store)])
        assert rc == 0
        rep = json.loads(out.read_text())
        stages = {r["stage"] for r in rep["rows"]}
        assert stages == {"original", "perturbed"}
        assert len(list(pdir.glob("*.npy"))) == 20
        assert len(list(pdir.glob("*.json"))) == 20

    def test_run_cw(self, trained):
        root, store = trained
        out = root / "cw.json"
        rc = main(["run", "--model", "cli_m0",
                   "--dataset", "pattern:n=10,seed=3,size=8,classes=4",
                   "--method", "cw", "--c", "100", "--steps", "10",
                   "--out", str(out), "--store", str(store)])
        assert rc == 0
        rep = json.loads(out.read_text())
        assert "mean_l2" in rep["meta"]

    def test_universal_and_plot(self, trained):
        root, store = trained
        out = root / "curves.csv"
        rc = main(["universal", "--model", "cli_m0",
                   "--dataset", "pattern:n=200,seed=4,size=8,classes=4",
                   "--source", "correctA", "--n", "20",
                   "--epsilon-grid", "0.01,0.05", "--iters", "3",
                   "--eval", "correctA,correctB", "--out", str(out),
                   "--store", str(store)])
        assert rc == 0
        assert out.exists()
        rc = main(["plot", str(out), "--out", str(root / "fig")])
        assert rc == 0
        assert (root / "fig.svg").exists()
        assert (root / "fig.png").exists()
        assert (root / "fig.csv").exists()

    def test_manifold_curve(self, trained):
        root, store = trained
        out = root / "mani.csv"
        rc = main(["manifold-curve", "--model", "cli_m0",
                   "--dataset", "pattern:n=30,seed=5,size=8,classes=4",
                   "--k", "5", "--q", "2", "--n", "10",
                   "--epsilon-grid", "0.01,0.1", "--iters", "2",
                   "--out", str(out), "--store", str(store)])
        assert rc == 0
        assert "mean_distance" in out.read_text().splitlines()[0]

    def test_pca_train_and_compare(self, trained):
        root, store = trained
        rc = main(["pca-train", "--dataset", "pattern:n=120,seed=1,size=8,classes=4",
                   "--structure", "tinycnn", "--d", "30", "--m", "5", "--c", "10",
                   "--epochs", "4", "--lr", "0.05", "--batch-size", "32",
                   "--out", "cli_pca30", "--store", str(store)])
        assert rc == 0
        out = root / "cmp.csv"
        rc = main(["pca-compare", "--models", "cli_m0,cli_pca30",
                   "--dataset", "pattern:n=200,seed=4,size=8,classes=4",
                   "--epsilon-grid", "0.05", "--n", "15", "--iters", "2",
                   "--out", str(out), "--store", str(store)])
        assert rc == 0
        text = out.read_text()
        assert "cli_m0" in text and "cli_pca30" in text

    def test_report_renders(self, trained, capsys):
        root, store = trained
        out = root / "report.json"
        csv_out = root / "report.csv"
        rc = main(["report", str(out), "--csv", str(csv_out)])
        assert rc == 0
        assert csv_out.exists()
        assert "accuracy" in capsys.readouterr().out

    def test_config_file_defaults(self, trained, tmp_path):
        import yaml

        root, store = trained
        cfg = tmp_path / "run.yaml"
        cfg.write_text(yaml.safe_dump({
            "model": "cli_m0",
            "dataset": "pattern:n=8,seed=6,size=8,classes=4",
            "iters": 2, "store": str(store),
            "out": str(tmp_path / "from_cfg.json")}))
        rc = main(["run", "--config", str(cfg)])
        assert rc == 0
        assert (tmp_path / "from_cfg.json").exists()
