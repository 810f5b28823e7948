import pytest

from marl_lens.errors import ConfigInvalid
from marl_lens.hyperparams import (apply_overrides, default_hyperparams, parse_target_update,
                                   pg_config, q_config)


@pytest.mark.parametrize("alg,ps,fam,field,value", [
    ("iql", True, "lbf", "hidden_dim", 128),
    ("iql", False, "lbf", "hidden_dim", 64),
    ("iql", True, "lbf", "epsilon_decay_steps", 2e6),
    ("iql", False, "rware", "epsilon_decay_steps", 5e4),
    ("iql", True, "lbf", "target_update", ("hard", 200)),
    ("vdn", True, "lbf", "target_update", ("soft", 0.01)),
    ("vdn", False, "lbf", "target_update", ("hard", 200)),
    ("vdn", True, "lbf", "evaluation_epsilon", 0.0),
    ("vdn", False, "lbf", "lr", 1e-4),
    ("qmix", True, "rware", "network", "fc"),
    ("qmix", True, "lbf", "network", "gru"),
    ("qmix", True, "rware", "lr", 5e-4),
    ("qmix", False, "lbf", "lr", 1e-4),
    ("qmix", False, "rware", "lr", 3e-4),
    ("qmix", True, "lbf", "mixing_embed_dim", 32),
    ("mappo", True, "lbf", "n_step", 5),
    ("mappo", False, "lbf", "target_update", ("hard", 200)),
    ("mappo", False, "rware", "target_update", ("soft", 0.01)),
    ("mappo", True, "lbf", "reward_standardisation", False),
    ("mappo", True, "rware", "lr", 5e-4),
    ("maa2c", True, "lbf", "n_step", 10),
    ("maa2c", False, "lbf", "n_step", 5),
    ("maa2c", True, "rware", "hidden_dim", 64),
    ("maa2c", True, "lbf", "evaluation_epsilon", 0.01),
    ("maa2c", True, "lbf", "n_workers", 10),
    ("ippo", True, "lbf", "ppo_epochs", 4),
    ("ia2c", False, "rware", "network", "fc"),
])
def test_table_values(alg, ps, fam, field, value):
    assert getattr(default_hyperparams(alg, ps, fam), field) == value


def test_unknown_keys():
    with pytest.raises(ConfigInvalid):
        default_hyperparams("dqn", True, "lbf")
    with pytest.raises(ConfigInvalid):
        default_hyperparams("iql", True, "smac")
    with pytest.raises(ConfigInvalid):
        apply_overrides(default_hyperparams("iql", True, "lbf"), {"learning_rate": "1"})


def test_overrides_are_typed():
    hp = apply_overrides(default_hyperparams("iql", True, "lbf"),
                         {"lr": "0.001", "batch_size": "16", "reward_standardisation": "no",
                          "target_update": "0.05(soft)", "network": "FC"})
    assert hp.lr == 0.001 and hp.batch_size == 16 and hp.reward_standardisation is False
    assert hp.target_update == ("soft", 0.05) and hp.network == "fc"
    with pytest.raises(ConfigInvalid):
        apply_overrides(hp, {"batch_size": "many"})
    with pytest.raises(ConfigInvalid):
        apply_overrides(hp, {"network": "lstm"})


def test_parse_target_update():
    assert parse_target_update("hard:200") == ("hard", 200)
    assert parse_target_update("soft:0.01") == ("soft", 0.01)
    assert parse_target_update("200(hard)") == ("hard", 200)
    for bad in ("hard:0.5", "soft:2", "sometimes"):
        with pytest.raises(ConfigInvalid):
            parse_target_update(bad)


def test_learner_configs():
    hp = default_hyperparams("qmix", True, "rware")
    qc = q_config("qmix", True, hp)
    assert qc.network == "fc" and qc.hypernet_embed == 64
    pc = pg_config("mappo", False, default_hyperparams("mappo", False, "lbf"))
    assert pc.is_ppo and pc.centralized_critic and pc.n_step == 10
