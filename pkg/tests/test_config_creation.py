import pytest

import dcsbm as dc


def test_same_validation_more_than_once():
    with pytest.raises(dc.ConfigError):

        class Settings:
            _ = dc.Integer().optional().optional()


def test_required_then_optional():
    constraint = dc.Integer().optional()
    constraint = constraint.required()

    with pytest.raises(dc.ConfigError):
        constraint.validate(None)


def test_base_without_kwargs():
    class Klass(dc.Base):
        trials = dc.Integer().required()

    with pytest.raises(dc.ConfigError):
        _ = Klass()


def test_base_with_unexpected_kwargs():
    class Klass(dc.Base):
        trials = dc.Integer().required()

    with pytest.raises(dc.ConfigError) as e:
        _ = Klass(trials=1, restarts=2)

    assert "restarts" in e.value.errors


def test_base_with_correct_kwargs():
    class Klass(dc.Base):
        trials = dc.Integer().required()

    assert Klass(trials=3).trials == 3


def test_defaults():
    config = dc.ExactConfig()

    assert config.time_limit == 60.0
    assert config.vertex_order is dc.VertexOrder.DEGREE
    assert config.use_sbc is True
    assert config.threads == 1
    assert config.trace is None


def test_from_mapping():
    config = dc.ExactConfig.from_mapping({"time-limit": 5, "vertex-order": "input", "use-sbc": False})

    assert config.time_limit == 5.0
    assert config.vertex_order is dc.VertexOrder.INPUT
    assert config.use_sbc is False


def test_from_mapping_rejects_non_mapping():
    with pytest.raises(dc.ConfigError):
        dc.EmConfig.from_mapping(["trials", 3])


def test_replace():
    config = dc.EmConfig(trials=5)
    changed = config.replace(trials=3)

    assert changed.trials == 3
    assert config.trials == 5
    assert changed.variant is dc.EmVariant.LS2


def test_equality():
    assert dc.ExactConfig() == dc.ExactConfig()
    assert dc.ExactConfig() != dc.ExactConfig(use_sbc=False)


def test_variant_is_coerced():
    assert dc.EmConfig(variant="em-ls1").variant is dc.EmVariant.LS1

    with pytest.raises(dc.ConfigError):
        dc.EmConfig(variant="em-ls3")


def test_assignment_validates():
    config = dc.ExactConfig()

    with pytest.raises(dc.ConfigError):
        config.time_limit = -5

    assert config.time_limit == 60.0


def test_cross_field_validation():
    with pytest.raises(dc.ConfigError):
        dc.GeneratorConfig(n=4, K=3, omega_spec=dc.S1Pair(0.1, 0.9))

    with pytest.raises(dc.ConfigError):
        dc.GeneratorConfig(n=2, K=3, omega_spec=dc.S2Strength("low"))

    with pytest.raises(dc.ConfigError):
        dc.GeneratorConfig(n=3, K=2, omega_spec=dc.S2Strength("low"), theta=[1.0, 1.0])

    with pytest.raises(dc.ConfigError):
        dc.GeneratorConfig(n=3, K=2, omega_spec=dc.AffinityMatrix.constant(3, 0.5))


def test_generator_config():
    config = dc.GeneratorConfig(n=5, K=2, omega_spec=dc.S2Strength("high"), theta=[1, 2, 1, 2, 1])

    assert config.seed == 0
    assert config.reject_isolated and config.reject_empty_truth
    assert config.propensities.tolist() == [1.0, 2.0, 1.0, 2.0, 1.0]
    assert dc.GeneratorConfig(n=5, K=2, omega_spec=dc.S2Strength("high")).propensities.tolist() == [1.0] * 5


def test_benchmark_budgets():
    assert dc.BenchmarkBudgets(time_limit=5).exact_time_limit == 5.0
    assert dc.BenchmarkBudgets(time_limit=5, full_budgets=True).exact_time_limit == 600.0
