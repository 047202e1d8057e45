import math
import os

import numpy as np
import pytest

import etts


def test_kld_matches_formula():
    mu = np.array([[0.5, -1.0, 0.0]])
    log_var = np.array([[0.0, -1.0, 0.7]])
    expected = 0.5 * np.sum(mu**2 + np.exp(log_var) - 1.0 - log_var, axis=-1)
    np.testing.assert_allclose(etts.kld_closed_form(mu, log_var), expected, rtol=0, atol=1e-12)


def test_hinge_table():
    assert etts.d_hinge_loss([-2.0], [2.0]) == 0.0
    assert etts.d_hinge_loss([0.0], [0.0]) == pytest.approx(2.0, abs=1e-12)
    assert etts.d_hinge_loss([-0.5], [0.5]) == pytest.approx(1.0, abs=1e-12)


def test_mol_masses_sum_to_one():
    rng = np.random.default_rng(0)
    grid = np.linspace(-1.0, 1.0, 8)
    logits = np.broadcast_to(rng.normal(size=3), (8, 3))
    means = np.broadcast_to(rng.normal(scale=0.5, size=3), (8, 3))
    log_scales = np.broadcast_to(rng.normal(-2.0, 0.5, size=3), (8, 3))
    lp = etts.mol_log_prob(grid, logits, means, log_scales, levels=8)
    assert np.exp(lp).sum() == pytest.approx(1.0, abs=1e-9)


def test_schedule():
    assert etts.ops_at_step(0) == {"name": "ops5", "ops": 5, "gan": False}
    assert etts.ops_at_step(10**6)["gan"] is True
    assert etts.beta_kld(0) == 0.0
    assert etts.beta_kld(10, ramp_start=0, ramp_end=20, period=5) == 0.5


def test_wav_and_mel_round_trip(tmp_path):
    t = np.arange(16000) / 16000.0
    tone = (0.3 * np.sin(2 * math.pi * 440.0 * t)).astype(np.float32)
    path = str(tmp_path / "tone.wav")
    etts.save_wav(path, tone)
    back, rate = etts.load_wav(path)
    assert rate == 16000
    np.testing.assert_allclose(back, tone, atol=1.0 / 32768)
    mel = etts.log_mel(back, n_mels=40)
    assert mel.shape[1] == 40
    assert np.isfinite(mel).all()
    with pytest.raises(FileNotFoundError):
        etts.load_wav(str(tmp_path / "absent.wav"))


def test_config_overrides(tmp_path):
    path = tmp_path / "run.json"
    path.write_text('{"train_teacher": {"steps": 5}}')
    text = etts.load_config(str(path), ["distill.steps=7"])
    assert '"steps":5' in text.replace(" ", "")
    path.write_text('{"train_teacher": {"stepz": 5}}')
    with pytest.raises(etts.ConfigError):
        etts.load_config(str(path))


@pytest.mark.skipif(not os.environ.get("ETTS_TOY_CONFIG"), reason="toy config path not provided")
def test_toy_config_loads():
    assert etts.load_config(os.environ["ETTS_TOY_CONFIG"])
