import hashlib

import numpy as np
import pytest
import yaml

from bsdbnet import build_model, read_wav, save_checkpoint
from bsdbnet.cli import main
from bsdbnet.config import ConfigError, load_run_config, parse_run_config
from bsdbnet.dsp import Waveform, write_wav
from bsdbnet.model import NAMED_CONFIGS, named_config

TINY_MODEL = {"name": "micro", "decoder_mult": 1, "d_state": 2}


def write_config(path, **doc):
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture()
def ckpt(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, build_model("micro", seed=0))
    return path


@pytest.fixture()
def wav(tmp_path):
    path = tmp_path / "in.wav"
    x = 0.3 * np.sin(np.arange(7777) * 0.03) + 0.05 * np.random.default_rng(0).standard_normal(7777)
    write_wav(path, Waveform(x))
    return path


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------- enhance


def test_enhance_preserves_rate_and_length(tmp_path, ckpt, wav, capsys):
    out = tmp_path / "out.wav"
    assert main(["enhance", str(wav), "--checkpoint", str(ckpt), "--out", str(out)]) == 0
    y = read_wav(out)
    assert y.sample_rate == 16000 and len(y) == 7777


def test_enhance_identity_mask_round_trip(tmp_path, ckpt, wav):
    out = tmp_path / "id.wav"
    assert main(["enhance", str(wav), "--checkpoint", str(ckpt), "--out", str(out), "--identity-mask"]) == 0
    x, y = read_wav(wav).samples, read_wav(out).samples
    snr = 10 * np.log10(np.sum(x**2) / max(np.sum((x - y) ** 2), 1e-300))
    assert snr > 50


def test_enhance_is_byte_deterministic(tmp_path, ckpt, wav):
    a, b = tmp_path / "a.wav", tmp_path / "b.wav"
    for out in (a, b):
        assert main(["enhance", str(wav), "--checkpoint", str(ckpt), "--out", str(out), "--seed", "4"]) == 0
    assert digest(a) == digest(b)


def test_enhance_rejects_wrong_rate(tmp_path, ckpt, capsys):
    import wave

    bad = tmp_path / "8k.wav"
    with wave.open(str(bad), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(8000)
        fh.writeframes(b"\x00\x00" * 800)
    assert main(["enhance", str(bad), "--checkpoint", str(ckpt), "--out", str(tmp_path / "o.wav")]) != 0
    assert "16000" in capsys.readouterr().err


def test_enhance_rejects_corrupt_checkpoint(tmp_path, wav, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"\x00" * 64)
    out = tmp_path / "o.wav"
    assert main(["enhance", str(wav), "--checkpoint", str(bad), "--out", str(out)]) != 0
    assert "checkpoint" in capsys.readouterr().err
    assert not out.exists()


def test_enhance_leaves_input_untouched(tmp_path, ckpt, wav):
    before = digest(wav)
    main(["enhance", str(wav), "--checkpoint", str(ckpt), "--out", str(tmp_path / "o.wav")])
    assert digest(wav) == before
    assert main(["enhance", str(wav), "--checkpoint", str(ckpt), "--out", str(wav)]) != 0
    assert digest(wav) == before


# ---------------------------------------------------------------- profile


def test_profile_all_in_grid_order(capsys):
    assert main(["profile", "all"]) == 0
    lines = capsys.readouterr().out.splitlines()
    rows = [ln.split()[0] for ln in lines[2:2 + len(NAMED_CONFIGS)]]
    assert rows == list(NAMED_CONFIGS)


def test_profile_check_128_6(capsys):
    assert main(["profile", "128-6", "--check"]) == 0
    assert "targets met" in capsys.readouterr().out


def test_profile_csv(capsys):
    assert main(["profile", "64-4", "micro", "--csv"]) == 0
    out = capsys.readouterr().out.strip().splitlines()
    assert out[0].startswith("name,") and [r.split(",")[0] for r in out[1:]] == ["64-4", "micro"]


def test_profile_usage_and_unknown(capsys):
    assert main(["profile"]) != 0
    assert "usage" in capsys.readouterr().err
    assert main(["profile", "999-9"]) != 0
    err = capsys.readouterr().err
    assert "128-6" in err and "valid names" in err


def test_no_command_prints_usage(capsys):
    assert main([]) != 0
    assert "usage" in capsys.readouterr().err


# ---------------------------------------------------------------- probe


def test_probe_causality_passes(capsys):
    assert main(["probe-causality", "--config", "micro", "--trials", "3"]) == 0
    assert "causal" in capsys.readouterr().out


def test_probe_fails_above_tolerance(capsys):
    # A negative tolerance cannot be met, so the exit status must flag it.
    assert main(["probe-causality", "--config", "micro", "--trials", "1", "--tolerance", "-1"]) == 1


def test_probe_from_checkpoint(ckpt):
    assert main(["probe-causality", "--checkpoint", str(ckpt), "--trials", "2"]) == 0


# ---------------------------------------------------------------- train


def test_train_toy_writes_checkpoint(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "toy.yaml", run_dir=str(tmp_path / "run"), model=TINY_MODEL,
        optim={"max_steps": 4, "val_every": 2, "batch_size": 2},
        data={"toy": True, "n_clips": 2, "seconds": 0.25},
    )
    assert main(["train", str(cfg)]) == 0
    assert (tmp_path / "run" / "best.ckpt").exists()
    assert (tmp_path / "run" / "history.csv").read_text().startswith("step,train_loss,val_loss,lr")
    # A second run into the same directory needs --resume.
    assert main(["train", str(cfg)]) != 0


def test_train_resume_continues_schedule(tmp_path, monkeypatch):
    from bsdbnet import training

    monkeypatch.setattr(training, "evaluate", lambda *a, **k: 1.0)
    run = tmp_path / "run"
    base = dict(run_dir=str(run), model=TINY_MODEL, data={"toy": True, "n_clips": 2, "seconds": 0.25})
    first = write_config(tmp_path / "a.yaml", optim={"max_steps": 4, "val_every": 2, "batch_size": 2}, **base)
    assert main(["train", str(first)]) == 0
    more = write_config(tmp_path / "b.yaml", optim={"max_steps": 8, "val_every": 2, "batch_size": 2}, **base)
    assert main(["train", str(more), "--resume"]) == 0
    rows = training.read_history(run / "history.csv")
    assert [r.step for r in rows] == list(range(1, 9))
    # Validation 1 sets the best; 2 and 3 stagnate and trigger the halving.
    assert [r.lr for r in rows if r.val_loss is not None] == [5e-4, 5e-4, 2.5e-4, 2.5e-4]


def test_train_missing_dataset_fails_fast(tmp_path, capsys, monkeypatch):
    from bsdbnet import cli

    def boom(*a, **k):
        raise AssertionError("training started")

    monkeypatch.setattr(cli, "train", boom)
    cfg = write_config(tmp_path / "c.yaml", data={"clean_dir": str(tmp_path / "nope"),
                                                  "noise_dir": str(tmp_path)})
    assert main(["train", str(cfg)]) == 2
    assert "data.clean_dir" in capsys.readouterr().err


def test_train_unknown_key_named(tmp_path, capsys):
    cfg = write_config(tmp_path / "d.yaml", optim={"learning_rate": 1.0}, data={"toy": True})
    assert main(["train", str(cfg)]) == 2
    assert "optim.learning_rate" in capsys.readouterr().err


# ---------------------------------------------------------------- config


def test_config_defaults_and_env(tmp_path, monkeypatch):
    monkeypatch.setenv("BSDBNET_RUN_DIR", str(tmp_path / "runs"))
    run = load_run_config(write_config(tmp_path / "exp1.yaml", data={"toy": True}))
    assert run.run_dir == tmp_path / "runs" / "exp1"
    assert run.model.name == "micro" and run.optim.lr == 5e-4 and run.loss.beta == 0.5


def test_config_model_forms():
    assert parse_run_config({"model": "64-4", "data": {"toy": True}}).model.embed_dim == 64
    cfg = parse_run_config({"model": {"name": "64-4", "dilations": [1, 2, 4]}, "data": {"toy": True}}).model
    assert cfg.depth == 4 and cfg.dilations == (1, 2, 4)
    cfg = parse_run_config({"model": {"embed_dim": 16, "depth": 2}, "data": {"toy": True}}).model
    assert (cfg.embed_dim, cfg.depth) == (16, 2)


@pytest.mark.parametrize("doc, msg", [
    ({"data": {"toy": True}, "extra": 1}, "unknown key extra"),
    ({"data": {"toy": True, "clips": 3}}, "data.clips"),
    ({"data": {"toy": True}, "model": {"width": 3}}, "model.width"),
    ({"data": {"toy": True}, "model": "huge"}, "valid names"),
    ({"data": {"toy": True}, "loss": {"beta": 2}}, "beta"),
    ({"model": "micro"}, "missing data"),
    ({"data": {}}, "clean_dir"),
])
def test_config_errors(doc, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_run_config(doc)


def test_config_unreadable(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed")
    with pytest.raises(ConfigError, match="invalid YAML"):
        load_run_config(bad)


def test_shipped_toy_config_matches_recipe():
    from pathlib import Path

    from bsdbnet.training import TOY_OPTIM

    run = load_run_config(Path(__file__).parent.parent / "configs" / "toy.yaml")
    assert run.model == named_config("micro")
    for key, value in TOY_OPTIM.items():
        assert getattr(run.optim, key) == value
