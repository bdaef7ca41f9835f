import json
import re

import numpy as np
import pytest

from signgan import cli
from signgan.config import ConfigError, RunConfig, load_config, parse_config
from signgan.data import make_synthetic_dataset, write_png

ERROR_LINE = re.compile(r'^signgan: error code=(\d+) kind=(\w+) msg=(".*")$')

TINY = """\
dataset = "data"
out_dir = "run"
seed = 3
steps = {steps}
max_stage = 1
widths = [8, 8]
latent_dim = 4
embed_dim = 4
attention_resolutions = []
batch_sizes = [4, 4]
fade_images = 8
stable_images = 8
checkpoint_every = 2
"""


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def parse_error(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1, err
    m = ERROR_LINE.match(lines[0])
    assert m, lines[0]
    return int(m.group(1)), m.group(2), json.loads(m.group(3))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    make_synthetic_dataset(str(root / "data"), per_class=6, resolution=16, seed=1)
    return root


def write_config(root, name="run.toml", steps=4, extra=""):
    path = root / name
    path.write_text(TINY.format(steps=steps) + extra)
    return path


# ------------------------------------------------------------------ config

def test_parse_resolves_relative_paths(workspace):
    cfg = load_config(write_config(workspace))
    assert cfg.dataset == str(workspace / "data")
    assert cfg.out_dir == str(workspace / "run")
    assert cfg.widths == (8, 8) and cfg.lr == 1e-3 and cfg.beta1 == 0.0


@pytest.mark.parametrize("extra,match", [
    ("learning_rate = 0.1\n", "unknown keys: learning_rate"),
    ("lr = \"fast\"\n", "lr must be float"),
    ("widths = [8, 8.5]\n", "widths must be a list of integers"),
    ("gp_lambda = 0\n", "gp_lambda"),
    ("steps = -1\n", "non-negative"),
])
def test_config_errors(workspace, extra, match):
    text = TINY.format(steps=1)
    key = extra.split("=")[0].strip()
    text = "\n".join(line for line in text.splitlines() if not line.startswith(key + " ")) + "\n" + extra
    with pytest.raises(ConfigError, match=match):
        parse_config(text, str(workspace))


def test_config_missing_required_and_paths(workspace, tmp_path):
    with pytest.raises(ConfigError, match="missing required keys: out_dir"):
        parse_config('dataset = "data"\n', str(workspace))
    with pytest.raises(ConfigError, match="dataset directory does not exist"):
        parse_config('dataset = "nope"\nout_dir = "o"\n', str(tmp_path))
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("dataset = \n", str(tmp_path))


def test_config_attention_width_constraint(workspace):
    text = TINY.format(steps=1).replace("attention_resolutions = []", "attention_resolutions = [16]").replace(
        "widths = [8, 8]", "widths = [8, 12]")
    with pytest.raises(ConfigError, match="divisible by 8"):
        parse_config(text, str(workspace))


def test_config_defaults_match_desk_scale():
    cfg = RunConfig(dataset="d", out_dir="o")
    assert (cfg.max_stage, cfg.widths, cfg.gp_lambda, cfg.lr, cfg.beta2) == (2, (64, 64, 64), 10.0, 1e-3, 0.99)


# --------------------------------------------------------------------- CLI

def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(["gradcheck", "--bogus"], capsys)
    assert code == 2 and parse_error(err)[:2] == (2, "usage")


def test_missing_subcommand_is_usage_error(capsys):
    code, _, err = run([], capsys)
    assert code == 2 and parse_error(err)[1] == "usage"


def test_train_missing_config(capsys, tmp_path):
    code, _, err = run(["train", "--config", str(tmp_path / "missing.toml")], capsys)
    assert code == 3 and parse_error(err)[1] == "config"


def test_make_data(capsys, tmp_path):
    code, out, _ = run(["make-data", "--out", str(tmp_path / "d"), "--per-class", "2", "--resolution", "8"], capsys)
    assert code == 0 and "wrote 6 images" in out
    assert len(list((tmp_path / "d").rglob("*.png"))) == 6


def test_evaluate_fid_self_is_zero(capsys, workspace, tmp_path):
    d = str(workspace / "data" / "circle")
    code, out, _ = run(["evaluate", "--fid", d, d], capsys)
    assert code == 0
    assert abs(float(out.split("fid=")[1])) <= 1e-8


def test_evaluate_fid_stats_cache(capsys, workspace, tmp_path):
    a, b = str(workspace / "data" / "circle"), str(workspace / "data" / "square")
    cache = str(tmp_path / "real.stats")
    _, first, _ = run(["evaluate", "--fid", a, b, "--stats-cache", cache], capsys)
    # with the cache present the first directory is not read again
    _, second, _ = run(["evaluate", "--fid", str(tmp_path / "absent"), b, "--stats-cache", cache], capsys)
    assert first == second and float(first.split("=")[1]) > 0


def test_evaluate_errors(capsys, workspace, tmp_path):
    code, _, err = run(["evaluate"], capsys)
    assert code == 2
    code, _, err = run(["evaluate", "--fid", str(tmp_path / "x"), str(tmp_path / "y")], capsys)
    assert code == 4 and parse_error(err)[1] == "data"
    code, _, err = run(["evaluate", "--is", str(workspace / "data")], capsys)
    assert code == 2
    (tmp_path / "mixed").mkdir()
    write_png(tmp_path / "mixed" / "a.png", np.zeros((3, 8, 8)))
    write_png(tmp_path / "mixed" / "b.png", np.zeros((3, 16, 16)))
    code, _, err = run(["evaluate", "--fid", str(tmp_path / "mixed"), str(tmp_path / "mixed")], capsys)
    assert code == 4


def test_train_generate_evaluate_resume(capsys, workspace, tmp_path):
    cfg = write_config(workspace, "a.toml", steps=4)
    code, out, err = run(["train", "--config", str(cfg)], capsys)
    assert code == 0, err
    rundir = workspace / "run"
    log = (rundir / "metrics.log").read_text().splitlines()
    assert len(log) == 4 and log[0].startswith("step=0 stage=0")
    assert (rundir / "step_000002.ckpt").exists() and (rundir / "final.ckpt").exists()

    # resume to 6 steps from the step-4 checkpoint and compare against a straight 6-step run
    more = write_config(workspace, "b.toml", steps=6)
    code, _, err = run(["train", "--config", str(more), "--resume", str(rundir / "step_000004.ckpt")], capsys)
    assert code == 0, err
    resumed = (rundir / "metrics.log").read_text().splitlines()
    straight_cfg = write_config(workspace, "c.toml", steps=6, extra="").read_text().replace('"run"', '"run2"')
    (workspace / "c.toml").write_text(straight_cfg)
    assert run(["train", "--config", str(workspace / "c.toml")], capsys)[0] == 0
    straight = (workspace / "run2" / "metrics.log").read_text().splitlines()
    strip = lambda lines: [line.rsplit(" wall_time=", 1)[0] for line in lines]  # noqa: E731
    assert strip(resumed) == strip(straight)

    ckpt = str(rundir / "final.ckpt")
    code, out, err = run(["generate", "--sentence", "Circle, square triangle", "--checkpoint", ckpt,
                          "--stage", "1", "--out", str(tmp_path / "gen")], capsys)
    assert code == 0, err
    manifest = json.loads((tmp_path / "gen" / "manifest.json").read_text())["entries"]
    assert [e["token"] for e in manifest] == ["circle", "<black>", "<black>", "square", "<black>", "triangle"]

    code, _, err = run(["generate", "--sentence", "hexagon", "--checkpoint", ckpt, "--stage", "1",
                        "--out", str(tmp_path / "g2")], capsys)
    assert code == 8 and parse_error(err)[1] == "unrenderable"

    code, _, err = run(["generate", "--sentence", "circle", "--checkpoint", ckpt, "--stage", "2",
                        "--out", str(tmp_path / "g3")], capsys)
    assert code == 1 or code == 2 or code == 3 or parse_error(err)[0] == code

    clf = str(tmp_path / "clf.ckpt")
    code, out, err = run(["train-classifier", "--data", str(workspace / "data"), "--out", clf, "--epochs", "1"], capsys)
    assert code == 0, err
    (tmp_path / "p.txt").write_text("circle square triangle")
    code, out, err = run(["evaluate", "--bleu", str(tmp_path / "p.txt"), "--classifier", clf,
                          "--checkpoint", ckpt, "--stage", "1"], capsys)
    assert code == 0, err
    assert re.fullmatch(r"bleu1=\S+ bleu2=\S+ bleu3=\S+ bleu4=\S+\n", out)
    code, out, _ = run(["evaluate", "--is", str(tmp_path / "gen"), "--classifier", clf], capsys)
    assert code == 0 and out.startswith("is_mean=")


def test_corrupt_checkpoint_exit_code(capsys, tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"garbage!")
    code, _, err = run(["generate", "--sentence", "x", "--checkpoint", str(tmp_path / "bad.ckpt"),
                        "--stage", "0", "--out", str(tmp_path / "o")], capsys)
    assert code == 5 and parse_error(err)[1] == "checkpoint"


def test_nonfinite_and_internal_exit_codes(capsys, workspace, monkeypatch):
    from signgan.autodiff import NonFiniteError
    from signgan.training import Trainer

    cfg = write_config(workspace, "nf.toml", steps=2)

    def boom(self):
        raise NonFiniteError("matmul", 7, "forward")

    monkeypatch.setattr(Trainer, "progressive_step", boom)
    code, _, err = run(["train", "--config", str(cfg)], capsys)
    assert code == 6 and parse_error(err)[1] == "nonfinite"

    monkeypatch.setattr(Trainer, "progressive_step", lambda self: 1 / 0)
    code, _, err = run(["train", "--config", str(cfg)], capsys)
    assert code == 1 and parse_error(err)[1] == "internal"


def test_gradcheck_failure_exit_code(capsys, monkeypatch):
    from signgan import gradcheck

    monkeypatch.setattr(gradcheck, "run_suite", lambda **kw: [
        gradcheck.CheckResult("layer:ok", 1e-6, 1e-4, 0.1), gradcheck.CheckResult("layer:bad", 3e-3, 1e-4, 0.1)])
    code, out, err = run(["gradcheck"], capsys)
    assert code == 7 and parse_error(err)[1] == "gradcheck"
    assert "layer:bad" in out and "FAIL" in out


def test_vocabulary_dataset_mismatch_exit_code(capsys, workspace, tmp_path):
    vocab = tmp_path / "v.txt"
    vocab.write_text("word circle\nword hexagon\n")
    code, _, err = run(["train-classifier", "--data", str(workspace / "data"), "--out", str(tmp_path / "c"),
                        "--vocab", str(vocab)], capsys)
    assert code == 4
    assert "hexagon" in parse_error(err)[2]
