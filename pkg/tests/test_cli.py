import csv
import math
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from conftest import random_net
from ganmanifold.checkpoint import save_checkpoint
from ganmanifold.cli import main
from ganmanifold.cli.config import PRESETS, dump_config, parse_config, preset_config
from ganmanifold.errors import ConfigError
from ganmanifold.nn import Mlp, MlpParams, MlpSpec

SVG = "{http://www.w3.org/2000/svg}"

TINY = """\
[experiment]
seeds = 0, 1
log_interval = 4

[data]
n = 120
test_n = 60
labels_per_class = 3

[gan]
hidden = 12
layers = 2
steps = 12
batch_size = 16
checkpoint_every = 4

[classifier]
hidden = 12
layers = 2

[decoupled]
epochs = 4
batch_size = 3
latent_batch_size = 8

[unsup]
steps = 8
batch_size = 16
latent_batch_size = 8

[ssl]
steps = 8
batch_size = 8
latent_dim = 3
disc_hidden = 12
gen_hidden = 12
"""


def write(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_round_trip(name):
    cfg = preset_config(name)
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(PRESETS[name]) == cfg


def test_preset_values():
    toy = preset_config("toy-2d")
    assert (toy.regularizer.epsilon, toy.regularizer.eta, toy.decoupled.gamma_m) == (0.15, 0.01, 6.0)
    un = preset_config("toy-unsup")
    assert (un.regularizer.epsilon, un.unsup.gamma_L, un.unsup.gamma_K, un.unsup.gamma_h) == (
        0.15, 3.0, 1.0, 0.1)
    ssl = preset_config("sslgan-cifar-shape")
    assert (ssl.ssl.gamma_m, ssl.regularizer.epsilon, ssl.regularizer.eta) == (1e-3, 20.0, 1.0)
    assert (ssl.ssl.lr, ssl.ssl.beta1, ssl.ssl.init_std, ssl.ssl.batch_size) == (3e-4, 0.5, 0.05, 25)


def test_file_overrides_preset():
    cfg = parse_config("[experiment]\npreset = toy-2d\n[regularizer]\nepsilon = 0.5\n")
    assert cfg.regularizer.epsilon == 0.5 and cfg.decoupled.gamma_m == 6.0


@pytest.mark.parametrize("text,needle", [
    ("[data]\nnoize = 0.1\n", "noize"),
    ("[dataa]\nn = 10\n", "dataa"),
    ("[experiment]\npreset = nope\n", "nope"),
    ("[data]\nn = ten\n", "data.n"),
    ("[plot]\nkind = heatmap\n", "heatmap"),
    ("[plot]\nresolution = 8\n", "resolution"),
    ("[experiment]\nseeds =\n", "seeds"),
])
def test_strict_parsing(text, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(text)


def test_sweep_values_accepted_verbatim():
    cfg = parse_config("[sweep]\nparameter = epsilon\nvalues = 0, 5, 10, 20, 40, 60\n")
    assert cfg.sweep.values == (0.0, 5.0, 10.0, 20.0, 40.0, 60.0)
    cfg = parse_config("[sweep]\nparameter = eta\nvalues = 1e-4, 1e-3, 1e-2, 1e-1, 1, 10\n")
    assert cfg.sweep.values == (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0)


def test_unknown_key_exit_code(tmp_path, capsys):
    path = write(tmp_path, "[decoupled]\ngama_m = 1\n")
    assert main(["train-classifier", "--config", path, "--quiet"]) == 2
    assert "gama_m" in capsys.readouterr().err


def test_missing_files_exit_code(tmp_path, capsys):
    assert main(["eval", "--config", str(tmp_path / "none.ini"), "--quiet"]) == 4
    path = write(tmp_path, f"[eval]\ncheckpoint = {tmp_path / 'none.npz'}\n")
    assert main(["eval", "--config", path, "--out", str(tmp_path / "o"), "--quiet"]) == 4
    assert capsys.readouterr().err.strip()


def test_divergence_exit_code(tmp_path):
    text = TINY.replace("[decoupled]\n", "[decoupled]\nlr = 1e300\n")
    path = write(tmp_path, text, "div.ini")
    assert main(["train-classifier", "--config", path, "--out", str(tmp_path / "d"),
                 "--quiet"]) == 3


def test_train_gan_checkpoints(tmp_path):
    out = tmp_path / "gan"
    assert main(["train-gan", "--config", write(tmp_path, TINY), "--out", str(out),
                 "--seed", "3", "--quiet"]) == 0
    found = sorted(p.name for p in (out / "seed-3").glob("gan_step_*.npz"))
    assert found == [f"gan_step_{s:05d}.npz" for s in (4, 8, 12)]
    rows = read_rows(out / "seed-3" / "metrics.csv")
    assert rows[0][0] == "step" and len(rows) - 1 == math.ceil(12 / 4)
    summary = read_rows(out / "summary.csv")
    assert [r[0] for r in summary[1:]] == ["3", "mean", "std"]


def test_preset_checkpoint_schedule():
    g = preset_config("toy-2d").gan
    assert list(range(g.checkpoint_every, g.steps + 1, g.checkpoint_every)) == list(
        range(200, 4001, 200))


@pytest.mark.parametrize("command", ["train-classifier", "train-unsup", "train-ssl-gan"])
def test_reruns_are_byte_identical(tmp_path, command):
    path = write(tmp_path, TINY)
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main([command, "--config", path, "--out", str(out), "--quiet"]) == 0
    for rel in ("summary.csv", "seed-0/metrics.csv", "seed-1/metrics.csv"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()
    summary = read_rows(outs[0] / "summary.csv")
    assert summary[0] == ["seed", "error_rate_test", "error_rate_val", "steps", "wall_clock_s"]
    assert [r[0] for r in summary[1:]] == ["0", "1", "mean", "std"]
    metrics = read_rows(outs[0] / "seed-0" / "metrics.csv")
    assert metrics[0] == ["step", "loss_total", "loss_supervised", "loss_unsupervised",
                          "loss_feature_matching", "omega_manifold", "omega_ambient", "entropy",
                          "ridge", "error_rate_val"]


def test_sweep_zero_epsilon_row(tmp_path):
    text = TINY + "\n[sweep]\nparameter = epsilon\nvalues = 0, 0.3\n"
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", write(tmp_path, text), "--out", str(out), "--quiet"]) == 0
    rows = read_rows(out / "sweep.csv")
    assert [r[0] for r in rows[1:]] == ["0.0", "0.3"]
    assert float(rows[1][-1]) == 0.0 and float(rows[2][-1]) > 0.0
    assert (out / "epsilon=0.0" / "summary.csv").exists()


def test_sweep_needs_values(tmp_path):
    assert main(["sweep", "--config", write(tmp_path, TINY), "--out", str(tmp_path / "s"),
                 "--quiet"]) == 2


def _constant_classifier(tmp_path):
    spec = MlpSpec((2, 2))
    net = Mlp(spec, MlpParams([np.zeros((2, 2))], [np.array([0.0, 1.0])]))
    gen = random_net((2, 6, 2), seed=4)
    return save_checkpoint(tmp_path / "const.npz", {"classifier": net, "generator": gen})


def _plot(tmp_path, kind, extra=""):
    ckpt = _constant_classifier(tmp_path)
    text = (f"[data]\nn = 100\n[plot]\nkind = {kind}\ncheckpoint = {ckpt}\n"
            f"bounds = -1.5, 2.5, -1.0, 1.5\n{extra}")
    out = tmp_path / "plots"
    assert main(["plot", "--config", write(tmp_path, text, f"{kind}.ini"), "--out", str(out),
                 "--quiet"]) == 0
    return ET.parse(out / f"{kind}.svg").getroot()


def test_decision_boundary_grid(tmp_path):
    root = _plot(tmp_path, "decision_boundary", "resolution = 200\n")
    cells = [r for r in root.iter(f"{SVG}rect") if r.get("class") == "cell"]
    assert len(cells) == 40000
    assert {c.get("fill") for c in cells} == {cells[0].get("fill")}
    assert len(list(root.iter(f"{SVG}circle"))) > 0
    texts = [t.text for t in root.iter(f"{SVG}text")]
    assert "x0" in texts and "x1" in texts


def test_direction_field_arrow_lengths(tmp_path):
    root = _plot(tmp_path, "direction_field", "n_samples = 50\n[regularizer]\nepsilon = 0.2\n")
    lines = list(root.iter(f"{SVG}line"))
    assert len(lines) == 50
    # pixels back to data units: x spans 4 units, y 2.5 units over 480 px
    lengths = [math.hypot((float(e.get("x2")) - float(e.get("x1"))) * 4.0 / 480,
                          (float(e.get("y2")) - float(e.get("y1"))) * 2.5 / 480) for e in lines]
    assert np.allclose(lengths, 0.2, atol=5e-3)


@pytest.mark.parametrize("kind", ["regularizer_magnitude", "samples_overlay"])
def test_sample_plots(tmp_path, kind):
    root = _plot(tmp_path, kind, "n_samples = 30\n")
    assert len(list(root.iter(f"{SVG}circle"))) >= 30


def test_plot_is_deterministic(tmp_path):
    _plot(tmp_path, "regularizer_magnitude")
    first = (tmp_path / "plots" / "regularizer_magnitude.svg").read_bytes()
    _plot(tmp_path, "regularizer_magnitude")
    assert (tmp_path / "plots" / "regularizer_magnitude.svg").read_bytes() == first


def test_loss_curves_and_eval(tmp_path):
    path = write(tmp_path, TINY)
    out = tmp_path / "clf"
    assert main(["train-classifier", "--config", path, "--out", str(out), "--quiet"]) == 0
    text = f"[plot]\nkind = loss_curves\nmetrics = {out / 'seed-0' / 'metrics.csv'}\n"
    assert main(["plot", "--config", write(tmp_path, text, "lc.ini"), "--out", str(tmp_path / "p"),
                 "--quiet"]) == 0
    root = ET.parse(tmp_path / "p" / "loss_curves.svg").getroot()
    assert len(list(root.iter(f"{SVG}polyline"))) >= 2
    ev = TINY + f"\n[eval]\ncheckpoint = {out / 'seed-1' / 'classifier.npz'}\n"
    assert main(["eval", "--config", write(tmp_path, ev, "ev.ini"), "--out", str(tmp_path / "e"),
                 "--quiet"]) == 0
    trained = read_rows(out / "summary.csv")[2]
    evaluated = read_rows(tmp_path / "e" / "summary.csv")[1]
    assert evaluated[:4] == trained[:4]


def test_plot_kind_mismatch(tmp_path):
    gen_only = save_checkpoint(tmp_path / "g.npz", {"generator": random_net((2, 4, 2))})
    text = f"[plot]\nkind = decision_boundary\ncheckpoint = {gen_only}\n"
    assert main(["plot", "--config", write(tmp_path, text), "--out", str(tmp_path / "p"),
                 "--quiet"]) == 4


def test_module_entry_point():
    import subprocess
    import sys
    proc = subprocess.run([sys.executable, "-m", "ganmanifold", "--help"], capture_output=True,
                          text=True, cwd=Path(__file__).parent)
    assert proc.returncode == 0 and "train-gan" in proc.stdout
