import math

import pytest

from tdlsm.config import ConfigError, ExperimentConfig, desk_config, full_config
from tdlsm.mesh import BoundaryKind


def test_full_scale_defaults():
    cfg = full_config()
    assert (cfg.T_max, cfg.N_T, cfg.alpha, cfg.gamma) == (20.0, 1250, 0.1, 0.1)
    sp = cfg.sponge_spec()
    assert sp.thickness == pytest.approx(6.0 / cfg.f0)
    assert sp.beta_max == pytest.approx(10.0 * cfg.f0)
    assert sp.g_max == pytest.approx(0.2)
    boxes = cfg.scatterer_boxes()
    assert len(boxes) == 2 and all(b.lam == pytest.approx(math.sqrt(2)) for b in boxes)
    assert all(b.boundary_kind == BoundaryKind.IMPEDANCE for b in boxes)
    assert cfg.n_sv == 2500 and cfg.sampling_n == 41 and cfg.order == 9


def test_desk_preset():
    cfg = desk_config()
    assert (cfg.source_per_face, cfg.measurement_per_face, cfg.N_T, cfg.T_max) == (2, 3, 256, 10.0)
    assert cfg.target_h == pytest.approx(0.5)


def test_hash_stable_and_sensitive():
    a, b = full_config(), full_config()
    assert a.config_hash() == b.config_hash()
    c = a.with_overrides(["gamma=0.2"])
    assert c.config_hash() != a.config_hash()
    assert c.forward_hash() == a.forward_hash()
    assert a.with_overrides(["N_T=100"]).forward_hash() != a.forward_hash()


def test_save_load(tmp_path):
    cfg = desk_config().with_overrides(["seed=7", "output_dir=out"])
    cfg.save(tmp_path / "c.json")
    back = ExperimentConfig.load(tmp_path / "c.json")
    assert back == cfg


@pytest.mark.parametrize("pair", ["order=0", "alpha=2", "formulation=mixed", "n_sv_list=[3000]",
                                  "probe_half_width=5", "nonsense=1", "gamma", "N_T=0",
                                  'scatterers=[{"lo":[0,0,0],"hi":[0,1,1]}]'])
def test_invalid_overrides(pair):
    with pytest.raises(ConfigError):
        full_config().with_overrides([pair])


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{nope")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text("[]")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / "list.json")
