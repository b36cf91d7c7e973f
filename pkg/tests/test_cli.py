import csv
import shutil
from pathlib import Path

import numpy as np
import pytest
from conftest import write_config

from swinsight import cli, config, runner
from swinsight.checkpoint import load_checkpoint, save_checkpoint
from swinsight.errors import ConfigError


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    return code


# ---- config parsing


def test_config_parsing(tmp_path, two_fixtures):
    path = write_config(
        tmp_path / "c.ini",
        {"A": two_fixtures / "A/manifest.csv"},
        model={"window_size": 2},
        train={"batch_size": 8, "seed": 4},
        data={"per_class": 5, "split_ratios": "0.5, 0.25, 0.25"},
    )
    cfg = config.load_config(path)
    assert cfg.dataset_ids == ["A"] and cfg.seed == 4 and cfg.per_class == 5
    assert cfg.model_config().window_size == 2
    assert cfg.split_ratios == (0.5, 0.25, 0.25)
    assert cfg.out_dir == tmp_path / "run"


@pytest.mark.parametrize(
    "text",
    [
        "[trian]\nepochs = 2\n",
        "[train]\nepoch = 2\n",
        "[model]\npreset = swin-huge\n",
        "[model]\nwindow = 3\n",
        "[data]\ndatasets = A, A\nmanifest.A = x.csv\n",
        "[data]\ndatasets = A\n",
        "[data]\ndatasets = A+B\nmanifest.A+B = x.csv\n",
        "[data]\nsplit_ratios = 0.5, 0.5, 0.5\n",
        "[train]\nbatch_size = many\n",
    ],
)
def test_config_rejects(text):
    with pytest.raises(ConfigError):
        config.parse_config(text)


def test_config_missing_manifest(tmp_path):
    (tmp_path / "c.ini").write_text("[data]\ndatasets = A\nmanifest.A = nope.csv\n")
    with pytest.raises(ConfigError, match="not found"):
        config.load_config(tmp_path / "c.ini")


# ---- commands


def test_fixture_command(tmp_path, capsys):
    assert run(["fixture", "--out", tmp_path / "f", "--n", 5, "--size", 16, "--seed", 7]) == 0
    assert capsys.readouterr().out.strip().endswith("manifest.csv")
    assert len(list((tmp_path / "f/images").glob("*.png"))) == 10
    assert run(["fixture", "--out", tmp_path / "g", "--n", 5, "--size", 16, "--seed", 7]) == 0
    for p in (tmp_path / "f").rglob("*.*"):
        assert p.read_bytes() == (tmp_path / "g" / p.relative_to(tmp_path / "f")).read_bytes()
    assert run(["fixture", "--out", tmp_path / "h", "--n", 0]) == 1


def test_usage_errors_exit_1(capsys):
    assert run([]) == 1
    assert run(["train"]) == 1
    assert run(["bogus"]) == 1
    assert run(["--version"]) == 0


def test_train_eval_tsne_report(tmp_path, two_fixtures, capsys):
    cfg = write_config(tmp_path / "c.ini", {"A": two_fixtures / "A/manifest.csv"})
    assert run(["train", "--config", cfg]) == 0
    out = tmp_path / "run"
    trace = read_csv(out / "trace.csv")
    assert [r["epoch"] for r in trace] == ["1", "2"]
    assert (out / "curves.svg").read_text().startswith("<svg")
    assert (out / "config.ini").read_bytes() == cfg.read_bytes()
    ck = load_checkpoint(out / "checkpoint.swck")
    assert ck.train_set == "A" and len(ck.trace) == 2

    ev = tmp_path / "ev"
    assert run(["eval", "--checkpoint", out / "checkpoint.swck", "--manifest", two_fixtures / "A/manifest.csv", "--out", ev]) == 0
    rows = read_csv(ev / "report.csv")
    assert list(rows[0]) == ["train_set", "test_set", "accuracy", "precision", "recall", "f1", "auc"]
    assert rows[0]["train_set"] == "A" and rows[0]["test_set"] == "A"
    for name in ("report_rounded.csv", "roc_points.csv", "roc.svg", "scores.csv", "quarantine.csv"):
        assert (ev / name).is_file()
    first = {p.name: p.read_bytes() for p in ev.iterdir()}
    assert run(["eval", "--checkpoint", out / "checkpoint.swck", "--manifest", two_fixtures / "A/manifest.csv", "--out", ev]) == 0
    assert first == {p.name: p.read_bytes() for p in ev.iterdir()}

    ts = tmp_path / "ts"
    args = ["tsne", "--checkpoint", out / "checkpoint.swck", "--manifest", two_fixtures / "A/manifest.csv", "--out", ts, "--split", "train"]
    assert run(args + ["--iterations", 300]) == 0
    emb = read_csv(ts / "embedding.csv")
    assert list(emb[0]) == ["sample_index", "x", "y", "label", "dataset"]
    n_train = sum(1 for r in read_csv(two_fixtures / "A/manifest.csv") if r["split"] == "train")
    assert len(emb) == n_train
    svg = (ts / "tsne.svg").read_text()
    assert svg.count('class="legend"') == 1 and "CGI" in svg and "authentic" in svg
    before = (ts / "embedding.csv").read_bytes()
    assert run(args + ["--iterations", 300]) == 0
    assert (ts / "embedding.csv").read_bytes() == before

    assert run(["report", "--run", out]) == 0
    assert (out / "summary.md").is_file()


def test_lr_zero_gives_flat_trace(tmp_path, two_fixtures):
    cfg = write_config(tmp_path / "c.ini", {"A": two_fixtures / "A/manifest.csv"}, train={"learning_rate": 0.0, "epochs": 3})
    assert run(["train", "--config", cfg]) == 0
    losses = np.array([float(r["train_loss"]) for r in read_csv(tmp_path / "run/trace.csv")])
    # per-epoch shuffles change only the float32 summation order
    np.testing.assert_allclose(losses, losses[0], rtol=1e-6)


def test_eval_class_map_mismatch(tmp_path, two_fixtures):
    cfg = write_config(tmp_path / "c.ini", {"A": two_fixtures / "A/manifest.csv"}, train={"epochs": 1})
    assert run(["train", "--config", cfg]) == 0
    ck = load_checkpoint(tmp_path / "run/checkpoint.swck")
    ck.class_map = {0: "cgi", 1: "real"}
    save_checkpoint(tmp_path / "swapped.swck", ck)
    code = run(["eval", "--checkpoint", tmp_path / "swapped.swck", "--manifest", two_fixtures / "A/manifest.csv", "--out", tmp_path / "e"])
    assert code == 2


def test_error_exit_codes(tmp_path, two_fixtures):
    assert run(["train", "--config", tmp_path / "missing.ini"]) == 1
    (tmp_path / "bad.swck").write_bytes(b"NOPE" + bytes(20))
    assert run(["eval", "--checkpoint", tmp_path / "bad.swck", "--manifest", two_fixtures / "A/manifest.csv", "--out", tmp_path / "e"]) == 2
    feats = tmp_path / "f.csv"
    feats.write_text("label,dataset,f0\nreal,A,0.0\ncgi,A,1.0\n")
    assert run(["tsne", "--features", feats, "--out", tmp_path / "t"]) == 2
    assert run(["report", "--run", tmp_path / "nope"]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_3(tmp_path, two_fixtures):
    cfg = write_config(tmp_path / "c.ini", {"A": two_fixtures / "A/manifest.csv"}, train={"learning_rate": 1e30, "epochs": 2})
    assert run(["train", "--config", cfg]) == 3


def test_threads_env(tmp_path, monkeypatch):
    monkeypatch.setenv("SWINSIGHT_THREADS", "1")
    assert run(["fixture", "--out", tmp_path / "f", "--n", 3, "--size", 8]) == 0
    monkeypatch.setenv("SWINSIGHT_THREADS", "zero")
    assert run(["fixture", "--out", tmp_path / "f", "--n", 3, "--size", 8]) == 1


def test_tsne_from_feature_file(tmp_path):
    rng = np.random.default_rng(0)
    lines = ["label,dataset,f0,f1,f2"]
    for i in range(20):
        lab = i % 2
        v = rng.standard_normal(3) + 8 * lab
        lines.append(f"{'cgi' if lab else 'real'},S,{v[0]},{v[1]},{v[2]}")
    (tmp_path / "f.csv").write_text("\n".join(lines) + "\n")
    assert run(["tsne", "--features", tmp_path / "f.csv", "--out", tmp_path / "t", "--perplexity", 5]) == 0
    rows = read_csv(tmp_path / "t/embedding.csv")
    assert len(rows) == 20 and {r["label"] for r in rows} == {"real", "cgi"}


# ---- matrix and report


def test_matrix_single_dataset(tmp_path, two_fixtures):
    cfg = write_config(tmp_path / "c.ini", {"A": two_fixtures / "A/manifest.csv"}, train={"epochs": 1})
    assert run(["matrix", "--config", cfg]) == 0
    rows = read_csv(tmp_path / "run/matrix.csv")
    assert [(r["train_set"], r["test_set"]) for r in rows] == [("A", "A")]


def test_matrix_failed_cell_does_not_abort(tmp_path, two_fixtures):
    bad = tmp_path / "tiny"
    from swinsight import datapipe

    datapipe.make_synthetic_fixture(bad, 2, image_size=32, seed=0, dataset="T")  # too small to split
    cfg = write_config(
        tmp_path / "c.ini",
        {"A": two_fixtures / "A/manifest.csv", "T": bad / "manifest.csv"},
        train={"epochs": 1},
        data={"split_ratios": "0.5, 0.25, 0.25", "per_class": 6},
    )
    assert run(["matrix", "--config", cfg]) == 2
    rows = {(r["train_set"], r["test_set"]): r for r in read_csv(tmp_path / "run/matrix.csv")}
    assert len(rows) == 6
    assert rows[("A", "A")]["status"] == "ok"
    assert rows[("T", "A")]["status"].startswith("error")
    assert rows[("A", "T")]["status"].startswith("error")
    assert rows[("A+T", "A")]["status"].startswith("error")
    summary = (tmp_path / "run/summary.md").read_text()
    assert "Missing artifacts" in summary


def test_report_on_partial_run(tmp_path, two_fixtures):
    cfg = write_config(tmp_path / "c.ini", {"A": two_fixtures / "A/manifest.csv"}, train={"epochs": 1})
    assert run(["matrix", "--config", cfg]) == 0
    out = tmp_path / "run"
    first = (out / "summary.md").read_bytes()
    assert run(["report", "--run", out]) == 0
    assert (out / "summary.md").read_bytes() == first
    (out / "train_A/eval_A/roc.svg").unlink()
    assert run(["report", "--run", out]) == 0
    text = (out / "summary.md").read_text()
    assert "| A | A |" in text and "train_A/eval_A/roc.svg" in text

    partial = tmp_path / "partial"
    shutil.copytree(out / "train_A", partial / "train_A")
    _, missing = runner.write_summary(partial)
    assert "matrix.csv" in missing
    assert "| A | A |" in (partial / "summary.md").read_text()



# ---- shipped templates


def test_templates_parse(tmp_path):
    from swinsight import datapipe

    tdir = Path(__file__).resolve().parent.parent / "templates"
    for name in ("D1_cifake.csv", "D2_columbia.csv", "D3_jssstu.csv"):
        header, *rest = (tdir / name).read_text().splitlines()
        examples = [ln[2:] for ln in rest if ln.startswith("# ") and ln.count(",") == 3 and (",real," in ln or ",cgi," in ln)]
        (tmp_path / name).write_text("\n".join([header, *examples]) + "\n")
        m = datapipe.load_manifest(tmp_path / name)
        assert m.dataset_counts() == {name[:2]: len(examples)} and set(m.class_counts().values()) != {0}
    cfg = config.parse_config((tdir / "three_datasets.ini").read_text(), base_dir=tdir)
    assert cfg.dataset_ids == ["D1", "D2", "D3"] and cfg.per_class == 1500


def test_config_snapshot_reruns_identically(tmp_path, two_fixtures):
    cfg = write_config(tmp_path / "c.ini", {"A": two_fixtures / "A/manifest.csv"}, train={"epochs": 1})
    result = runner.run_matrix(config.load_config(cfg))
    assert result.config_snapshot == cfg.read_bytes()
    again = runner.run_matrix(config.load_config(result.out_dir / "config.ini"), tmp_path / "rerun")
    assert (tmp_path / "rerun/matrix.csv").read_bytes() == (result.out_dir / "matrix.csv").read_bytes()
    assert again.matrix()[("A", "A")].report.row() == result.matrix()[("A", "A")].report.row()


def test_perfect_separation_gives_auc_one(tmp_path):
    from PIL import Image

    # dark "real" vs bright "cgi" images: separable by mean intensity alone
    rng = np.random.default_rng(0)
    rows = ["path,label,dataset,split"]
    (tmp_path / "img").mkdir()
    for i in range(40):
        label = "cgi" if i % 2 else "real"
        base = 200 if label == "cgi" else 40
        px = np.clip(base + rng.integers(-30, 30, (32, 32, 3)), 0, 255).astype(np.uint8)
        Image.fromarray(px).save(tmp_path / f"img/{i}.png")
        rows.append(f"img/{i}.png,{label},P,{'test' if i >= 30 else 'train'}")
    manifest = tmp_path / "m.csv"
    manifest.write_text("\n".join(rows) + "\n")
    cfg = write_config(tmp_path / "c.ini", {"P": manifest}, train={"epochs": 10, "learning_rate": 1e-3, "batch_size": 8})
    assert run(["train", "--config", cfg]) == 0
    ev = tmp_path / "ev"
    assert run(["eval", "--checkpoint", tmp_path / "run/checkpoint.swck", "--manifest", manifest, "--out", ev]) == 0
    assert read_csv(ev / "report_rounded.csv")[0]["auc"] == "1.00"


def test_eval_on_recorded_splits_matches_matrix_cell(tmp_path, two_fixtures):
    cfg = write_config(
        tmp_path / "c.ini", {"A": two_fixtures / "A/manifest.csv"}, train={"epochs": 1}, data={"split_ratios": "0.5, 0.25, 0.25"}
    )
    assert run(["matrix", "--config", cfg]) == 0
    cell = tmp_path / "run/train_A"
    assert run(["eval", "--checkpoint", cell / "checkpoint.swck", "--manifest", cell / "splits.csv", "--out", tmp_path / "ev"]) == 0
    assert (tmp_path / "ev/report.csv").read_bytes() == (cell / "eval_A/report.csv").read_bytes()

    def scores(path):  # paths are relative to each manifest's own root
        return [{k: v for k, v in r.items() if k != "path"} for r in read_csv(path)]

    assert scores(tmp_path / "ev/scores.csv") == scores(cell / "eval_A/scores.csv")
