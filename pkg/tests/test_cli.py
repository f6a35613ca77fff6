"""Command-line interface: full pipeline, exit codes, file outputs."""

import json

import pytest

from zslbench.cli import main


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> train once; the pricier subcommands build on these."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    ckpt = root / "model.ckpt"
    assert run("synth", "--preset", "cub_like", "--seed", "17",
               "--out", str(data)) == 0
    assert run("train", "--data", str(data), "--out", str(ckpt),
               "--seed", "3", "--epochs", "12") == 0
    return root, data, ckpt


class TestPipeline:
    def test_attack_defend_eval_round_trip(self, workspace, capsys):
        root, data, ckpt = workspace
        atk = root / "atk"
        assert run("attack", "--data", str(data), "--model", str(ckpt),
                   "--preset", "FGSM_2", "--mode", "gzsl",
                   "--out", str(atk)) == 0
        adv_csv = atk / "adv_images.csv"
        assert adv_csv.is_file()
        summary = json.loads((atk / "adv_summary.json").read_text())
        assert summary["preset"] == "FGSM_2"
        assert summary["n_samples"] == 132  # gzsl test population

        dfd = root / "dfd"
        assert run("defend", "--preset", "SpS", "--images", str(adv_csv),
                   "--data", str(data), "--out", str(dfd)) == 0
        dfd_csv = dfd / "defended_images.csv"
        assert dfd_csv.is_file()

        capsys.readouterr()
        assert run("eval", "--data", str(data), "--model", str(ckpt),
                   "--mode", "gzsl", "--attacked", str(adv_csv),
                   "--defended", str(dfd_csv)) == 0
        payload = json.loads(capsys.readouterr().out)
        block = payload["gzsl"]
        assert {"u", "s", "h", "transitions", "defense_effects"} <= set(block)
        assert sum(block["defense_effects"]["counts"].values()) == 132

    def test_eval_both_modes_clean(self, workspace, capsys):
        root, data, ckpt = workspace
        capsys.readouterr()
        assert run("eval", "--data", str(data), "--model", str(ckpt),
                   "--mode", "both") == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload) == {"zsl", "gzsl"}
        assert "acc" in payload["zsl"]
        assert {"u", "s", "h"} <= set(payload["gzsl"])

    def test_eval_to_file(self, workspace, tmp_path):
        root, data, ckpt = workspace
        out = tmp_path / "eval.json"
        assert run("eval", "--data", str(data), "--model", str(ckpt),
                   "--mode", "zsl", "--out", str(out)) == 0
        assert "acc" in json.loads(out.read_text())["zsl"]

    def test_synth_is_byte_deterministic(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        for out in (a, b):
            assert run("synth", "--preset", "awa_like", "--seed", "5",
                       "--out", str(out)) == 0
        for name in ("manifest.json", "images.csv", "attributes.csv",
                     "splits.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


class TestBench:
    def test_small_grid_end_to_end(self, tmp_path):
        config = {
            "dataset": {"preset": "cub_like", "seed": 17},
            "modes": ["gzsl"],
            "attacks": ["FGSM_3"],
            "defenses": ["SpS"],
            "seed": 17,
        }
        cfg_path = tmp_path / "bench.json"
        cfg_path.write_text(json.dumps(config))
        out = tmp_path / "run"
        assert run("bench", "--config", str(cfg_path),
                   "--out", str(out)) == 0
        for name in ("report.json", "report.md", "ledger.jsonl",
                     "timings.json"):
            assert (out / name).is_file()
        report = json.loads((out / "report.json").read_text())
        assert list(report["modes"]) == ["gzsl"]
        qual = sorted((out / "qualitative").glob("*.ppm"))
        assert qual  # FGSM_3 flips predictions, so samples get exported


class TestExitCodes:
    def test_usage_errors_return_1(self, workspace, tmp_path):
        root, data, ckpt = workspace
        # argparse-level: bad choice
        assert run("synth", "--preset", "imagenet",
                   "--out", str(tmp_path / "x")) == 1
        # missing config file
        assert run("bench", "--config", str(tmp_path / "none.json")) == 1
        # config that is not JSON
        bad = tmp_path / "bad.json"
        bad.write_text("{ nope")
        assert run("bench", "--config", str(bad)) == 1
        # config with unknown keys
        unknown = tmp_path / "unknown.json"
        unknown.write_text(json.dumps({"datasets": {}}))
        assert run("bench", "--config", str(unknown)) == 1
        # unknown attack preset name
        assert run("attack", "--data", str(data), "--model", str(ckpt),
                   "--preset", "FGSM_9", "--out", str(tmp_path / "a")) == 1
        # training-time defense has no input transform
        assert run("defend", "--preset", "LbS",
                   "--images", str(tmp_path / "imgs.csv"),
                   "--data", str(data), "--out", str(tmp_path / "d")) == 1
        # missing dataset directory
        assert run("train", "--data", str(tmp_path / "nodata"),
                   "--out", str(tmp_path / "m.ckpt")) == 1

    def test_runtime_errors_return_2(self, workspace, tmp_path):
        root, data, ckpt = workspace
        garbage = tmp_path / "broken.ckpt"
        garbage.write_text("not a checkpoint\n")
        assert run("attack", "--data", str(data), "--model", str(garbage),
                   "--preset", "FGSM_2", "--out", str(tmp_path / "o")) == 2
