"""CLI surface: subcommand wiring, flag precedence, error reporting."""

import os

import numpy as np
import pytest

from oracles import parse_pgm
from scatgen.cli import build_parser, main
from scatgen.datasets import ensure_dataset
from scatgen.pipeline import STAGES


@pytest.fixture()
def workdir(tmp_path):
    dataset = str(tmp_path / "digits.idx3-ubyte")
    ensure_dataset(dataset, count=48, seed=2)
    config_path = tmp_path / "run.cfg"
    config_path.write_text(
        "\n".join([
            "# tiny end-to-end run",
            f"dataset = {dataset}",
            f"out_dir = {tmp_path / 'run'}",
            "seed = 3",
            "n_train = 48",
            "scattering_j = 2",
            "scattering_l = 4",
            "n_components = 16",
            "latent_width = 4",
            "decoder_epochs = 1",
            "vae_epochs = 1",
            "gan_epochs = 1",
            "batch_size = 16",
            "channel_schedule = 64, 32",
        ]) + "\n",
        encoding="utf-8",
    )
    return tmp_path, str(config_path)


class TestParser:
    def test_all_stages_are_subcommands(self):
        parser = build_parser()
        for stage in STAGES:
            args = parser.parse_args([stage])
            assert args.stage == stage

    def test_global_flags_parse(self):
        parser = build_parser()
        args = parser.parse_args(
            ["scatter", "--config", "c.cfg", "--seed", "9", "--out", "d"]
        )
        assert (args.config, args.seed, args.out) == ("c.cfg", 9, "d")

    def test_unknown_subcommand_exits(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["polish"])


class TestMain:
    def test_full_pipeline_through_cli(self, workdir, capsys):
        tmp_path, config = workdir
        for stage in STAGES:
            code = main([stage, "--config", config])
            assert code == 0, f"stage {stage} failed"
        printed = capsys.readouterr().out.strip().splitlines()
        assert printed[-1].endswith("report.txt")
        out_dir = tmp_path / "run"
        for name in ["coeffs.sgnc", "pca.sgnc", "whitened.sgnc", "decoder.sgnc",
                     "vae.sgnc", "gan.sgnc", "samples_gaussian.pgm",
                     "vizmatrix.pgm", "normality.tsv", "report.txt"]:
            assert (out_dir / name).exists(), name

    def test_missing_dependency_is_reported_not_raised(self, workdir, capsys):
        _, config = workdir
        code = main(["whiten", "--config", config])
        assert code == 1
        err = capsys.readouterr().err
        assert "scatter" in err and err.startswith("error:")

    def test_out_flag_overrides_config(self, workdir, capsys):
        tmp_path, config = workdir
        alt = str(tmp_path / "elsewhere")
        assert main(["scatter", "--config", config, "--out", alt]) == 0
        assert os.path.exists(os.path.join(alt, "coeffs.sgnc"))
        assert not os.path.exists(str(tmp_path / "run" / "coeffs.sgnc"))

    def test_seed_flag_changes_artifacts(self, workdir, capsys):
        tmp_path, config = workdir
        for stage in ("scatter", "fit-pca", "whiten", "train-vae"):
            assert main([stage, "--config", config]) == 0
        with open(tmp_path / "run" / "vae.sgnc", "rb") as handle:
            first = handle.read()
        assert main(["train-vae", "--config", config, "--seed", "123"]) == 0
        with open(tmp_path / "run" / "vae.sgnc", "rb") as handle:
            assert handle.read() != first

    def test_sample_source_flag(self, workdir, capsys):
        tmp_path, config = workdir
        for stage in ("scatter", "fit-pca", "whiten", "train-decoder", "train-vae"):
            assert main([stage, "--config", config]) == 0
        assert main(["sample", "--config", config, "--source", "vae",
                     "--count", "4"]) == 0
        path = tmp_path / "run" / "samples_vae.pgm"
        with open(path, "rb") as handle:
            magic, pixels = parse_pgm(handle.read())
        assert magic == "P5"
        assert pixels.shape == (57, 57)  # 2x2 grid of 28px tiles

    def test_vizmatrix_component_flags(self, workdir, capsys):
        tmp_path, config = workdir
        for stage in ("scatter", "fit-pca", "whiten", "train-decoder"):
            assert main([stage, "--config", config]) == 0
        assert main(["vizmatrix", "--config", config, "--c1", "2", "--c2", "3"]) == 0
        assert (tmp_path / "run" / "vizmatrix.pgm").exists()

    def test_bad_config_path_reported(self, capsys):
        code = main(["scatter", "--config", "/nonexistent/run.cfg"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_invalid_config_value_reported(self, workdir, capsys, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("n_components = 1\n", encoding="utf-8")
        code = main(["scatter", "--config", str(bad)])
        assert code == 1
        assert "n_components" in capsys.readouterr().err
