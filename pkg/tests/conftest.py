import numpy as np
import pytest

from texdeblur.config import desk_config
from texdeblur.data import load_train_pairs, make_synthetic_corpus, split_unpaired
from texdeblur.training import train_stage1, train_stage2


@pytest.fixture
def cfg():
    return desk_config()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# Shared miniature training setup: one tiny corpus and one short two-stage
# run reused by the training, inference and command-line test modules.


@pytest.fixture(scope="session")
def train_cfg():
    return desk_config().with_values(
        data__image_size=48,
        data__train_scenes=6,
        data__val_scenes=2,
        data__patch=32,
        data__batch=2,
        deblur__blocks=[1, 1, 1, 1],
        deblur__heads=[1, 1, 2, 2],
        train__stage1_steps=4,
        train__stage2_steps=3,
    )


@pytest.fixture(scope="session")
def corpus_dir(train_cfg, tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    make_synthetic_corpus(root, train_cfg, seed=5)
    return root


@pytest.fixture(scope="session")
def train_split(train_cfg, corpus_dir):
    pairs = load_train_pairs(corpus_dir)
    return split_unpaired(
        pairs, (train_cfg["data.ratio_blurry"], train_cfg["data.ratio_sharp"]), seed=5
    )


@pytest.fixture(scope="session")
def stage1_result(train_cfg, train_split, tmp_path_factory):
    return train_stage1(train_cfg, train_split, tmp_path_factory.mktemp("s1"), seed=11)


@pytest.fixture(scope="session")
def stage2_result(train_cfg, train_split, stage1_result, tmp_path_factory):
    return train_stage2(
        train_cfg,
        train_split,
        tmp_path_factory.mktemp("s2"),
        seed=12,
        stage1_checkpoint=stage1_result.checkpoint,
    )
