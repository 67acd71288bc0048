from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sofclr.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from sofclr.config import ConfigError, config_from_dict, config_to_dict, dump_config, load_config, parse_config
from sofclr.data import AugmentOp, SyntheticConfig, gen_synthetic, split_annotate
from sofclr.trainer import TrainConfig, train


def test_parse_typed_values_and_comments():
    cfg = parse_config("""
        # fairness weight
        alpha = 0.3
        iters = 7   # short run
        optimizer = momentum
        hidden = 16,8
        disc_hidden =
        aug_b = random_scale:0.5,1.5
        post_update_u = false
    """)
    assert cfg.alpha == 0.3 and cfg.iters == 7 and cfg.optimizer == "momentum"
    assert cfg.hidden == (16, 8) and cfg.disc_hidden == ()
    assert cfg.aug_b == AugmentOp("random_scale", (0.5, 1.5))
    assert cfg.post_update_u is False
    assert cfg.beta == TrainConfig().beta


@pytest.mark.parametrize("text, fragment", [
    ("alhpa = 1", "unknown key"),
    ("alpha = 1\nalpha = 2", "duplicate"),
    ("alpha 1", "line 1"),
    ("iters = many", "iters"),
    ("alpha = -1", "alpha"),
    ("post_update_u = yes", "true or false"),
    ("aug_a = blur:1", "augmentation"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_dump_round_trip(tmp_path):
    cfg = TrainConfig(alpha=0.123456789012345, hidden=(3,), disc_hidden=(), aug_a=AugmentOp())
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
    assert config_from_dict(config_to_dict(cfg)) == cfg
    with pytest.raises(ConfigError):
        config_from_dict({"bogus": 1})


@given(st.floats(0, 10), st.floats(1e-6, 1), st.integers(0, 10**6), st.sampled_from(["adam", "momentum"]))
def test_config_text_round_trip(alpha, eta, seed, opt):
    cfg = TrainConfig(alpha=alpha, eta=eta, seed=seed, optimizer=opt)
    assert parse_config(dump_config(cfg)) == cfg


def _trained(opt="adam", iters=3):
    ds = split_annotate(gen_synthetic(SyntheticConfig(n=40, seed=1)), 0.5, 1)
    cfg = TrainConfig(hidden=(6,), d=3, disc_hidden=(4,), batch_main=8, batch_attr=4, iters=iters,
                      warm_start=1, optimizer=opt)
    state, _ = train(cfg, ds)
    return ds, cfg, Checkpoint(cfg, cfg.encoder_spec(ds.d_in), cfg.disc_spec(ds.K), state)


@pytest.mark.parametrize("opt", ["adam", "momentum"])
def test_checkpoint_round_trip_and_exact_resume(tmp_path, opt):
    ds, cfg, ck = _trained(opt)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, ck)
    back = load_checkpoint(path)
    assert back.config == cfg and back.encoder == ck.encoder and back.discriminator == ck.discriminator
    for name in ("w", "w_prime", "m_tilde", "perm"):
        np.testing.assert_array_equal(getattr(back.state, name), getattr(ck.state, name))
    np.testing.assert_array_equal(back.state.u.values, ck.state.u.values)
    assert (back.state.t, back.state.cursor) == (ck.state.t, ck.state.cursor)
    longer = replace(cfg, iters=6)
    resumed, _ = train(longer, ds, resume=back.state)
    direct, _ = train(longer, ds)
    np.testing.assert_array_equal(resumed.w, direct.w)
    np.testing.assert_array_equal(resumed.w_prime, direct.w_prime)


def test_corrupt_checkpoints_are_rejected(tmp_path):
    _, _, ck = _trained()
    good = tmp_path / "ck.bin"
    save_checkpoint(good, ck)
    raw = good.read_bytes()
    cases = {
        "magic": b"XXXXXXXX" + raw[8:],
        "version": raw[:8] + (99).to_bytes(4, "little") + raw[12:],
        "truncated": raw[:-5],
        "trailing": raw + b"\0",
    }
    for name, blob in cases.items():
        p = tmp_path / f"{name}.bin"
        p.write_bytes(blob)
        with pytest.raises(CheckpointError):
            load_checkpoint(p)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.bin")
