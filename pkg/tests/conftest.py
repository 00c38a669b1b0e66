"""Shared fixtures: session-scoped trained models at two scales.

The micro model trains in seconds and backs plumbing tests. The full-scale
main/ablation pair backs the behavioral acceptance criteria and is built
once per session.
"""
import pytest

from scribblecap.training import TrainConfig, train


def micro_train_config(**overrides) -> TrainConfig:
    base = dict(n_images=16, grid=4, epochs=2, batch_size=4, lr=3e-3,
                k=4, min_objects=1, max_objects=2,
                min_scribble_points=4, max_scribble_points=6,
                lm_d_model=16, lm_layers=1, lm_heads=2, lm_ff_mult=2,
                lm_max_seq_len=48, lm_warmup_steps=40, lm_warmup_batch=2,
                n_queries=4, qf_width=16, qf_layers=1, qf_heads=2, qf_ff_mult=2,
                d_visual=20, eval_max_items=6, holdout_fraction=0.2, seed=11)
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def micro_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("micro-run"))
    return train(micro_train_config(), out)


@pytest.fixture(scope="session")
def micro_model(micro_run):
    return micro_run.model


@pytest.fixture(scope="session")
def accept_run(tmp_path_factory):
    """The documented desk-scale recipe, exactly as shipped (~5 min CPU)."""
    out = str(tmp_path_factory.mktemp("accept-main"))
    return train(TrainConfig(), out)


@pytest.fixture(scope="session")
def accept_ablation_run(tmp_path_factory):
    """Identical run with point tokens dropped (~4 min CPU)."""
    out = str(tmp_path_factory.mktemp("accept-ablation"))
    return train(TrainConfig(use_point_tokens=False), out)
