import pytest

from arel import config
from arel.attention import ConfigError
from arel.config import RunConfig


def test_defaults_validate():
    RunConfig().validate()


def test_parse_text_and_coefficients():
    cfg = config.parse_text("""
        # policy experiment
        env = two_button
        grid_size = 5
        coef.distance = 0.05
        alpha = 1          # int coerced to float
        seeds = [0, 1, 2]
        obs_radius = None
    """)
    assert cfg.env == "two_button" and cfg.grid_size == 5 and cfg.coefficients == {"distance": 0.05}
    assert isinstance(cfg.alpha, float) and cfg.seeds == [0, 1, 2] and cfg.obs_radius is None


def test_dump_roundtrip():
    cfg = RunConfig(env="two_button", coefficients={"distance": 0.1}, seeds=[3, 4], alpha=0.8)
    again = config.parse_text(config.dump(cfg))
    assert again == cfg and again.digest() == cfg.digest()


@pytest.mark.parametrize("text", [
    "alpha = 1.5", "omega = -1", "regularizer = entropy", "strategy = magic", "bogus = 1",
    "env = maze", "heads = 3", "alpha = 0.5\nalpha = 0.6", "just text", "coef.nope = 1",
    "policy_features = fancy",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        config.parse_text(text)


def test_errors_are_collected():
    with pytest.raises(ConfigError) as exc:
        config.from_dict({"alpha": 2.0, "omega": -1.0})
    assert "alpha" in str(exc.value) and "omega" in str(exc.value)


def test_ablation_grid_expressible():
    base = RunConfig()
    grid = [base.replace(alpha=a, omega=w) for a in (0.5, 0.8, 1.0) for w in (0.1, 1, 10, 20, 50, 100)]
    assert len({c.digest() for c in grid}) == 18
    assert base.replace(agent_attention="uniform").agent_attention == "uniform"
