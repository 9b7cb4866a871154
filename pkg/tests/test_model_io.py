import json

import numpy as np
import pytest

from lupi_hcrf.model_io import ModelFileError, dumps_model, load_model, model_from_dict, save_model
from lupi_hcrf.seqdata import SynthSpec, generate_synthetic
from lupi_hcrf.train import TrainConfig, predict, train


@pytest.fixture(scope="module")
def trained():
    data = generate_synthetic(SynthSpec(n_sequences_per_class=6, seq_len_range=(5, 8), seed=4))
    return data, train(data, tconfig=TrainConfig(n_states=3, max_iters=25, seed=2))


def test_reload_is_bit_exact(trained, tmp_path):
    _, model = trained
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert back.params == model.params
    assert back.config == model.config
    assert back.label_vocab == model.label_vocab
    for name in ("mean", "std", "privileged_mean", "privileged_std"):
        np.testing.assert_array_equal(getattr(back.scaler, name), getattr(model.scaler, name))
    np.testing.assert_array_equal(back.t_joint.mu, model.t_joint.mu)
    np.testing.assert_array_equal(back.t_joint.sigma, model.t_joint.sigma)
    assert back.t_joint.nu == model.t_joint.nu
    np.testing.assert_array_equal(back.fusion.gamma, model.fusion.gamma)
    assert back.fusion.eta == model.fusion.eta
    assert back.train_log == model.train_log
    assert dumps_model(back) == dumps_model(model)


def test_predict_unchanged_after_reload(trained, tmp_path):
    data, model = trained
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for s in data.samples[:5]:
        for strategy in ("mean", "mc", "regression", "drop"):
            a = predict(model, s.frames, strategy, n_samples=20, seed=3)
            b = predict(back, s.frames, strategy, n_samples=20, seed=3)
            assert a[0] == b[0]
            np.testing.assert_array_equal(a[1], b[1])


def test_rejects_bad_files(trained, tmp_path):
    _, model = trained
    d = json.loads(dumps_model(model))
    with pytest.raises(ModelFileError, match="format_version"):
        model_from_dict({**d, "format_version": 2})
    with pytest.raises(ModelFileError, match="params"):
        model_from_dict({**d, "params": d["params"][:-1]})
    with pytest.raises(ModelFileError):
        model_from_dict({**d, "label_vocab": ["only"]})
    with pytest.raises(ModelFileError):
        model_from_dict({k: v for k, v in d.items() if k != "config"})
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(ModelFileError):
        load_model(tmp_path / "junk.json")
