"""Run a few steps of both training stages on a micro corpus and print losses."""

import tempfile
from pathlib import Path

from texdeblur.checkpoint import load_checkpoint
from texdeblur.config import desk_config
from texdeblur.data import load_train_pairs, make_synthetic_corpus, split_unpaired
from texdeblur.training import train_stage1, train_stage2

cfg = desk_config().with_values(
    data__image_size=48,
    data__train_scenes=6,
    data__val_scenes=2,
    data__patch=32,
    data__batch=2,
    deblur__blocks=[1, 1, 1, 1],
    deblur__heads=[1, 1, 2, 2],
    train__stage1_steps=6,
    train__stage2_steps=4,
)
root = Path(tempfile.mkdtemp(prefix="texdeblur_demo_"))
make_synthetic_corpus(root / "corpus", cfg, seed=0)
split = split_unpaired(load_train_pairs(root / "corpus"), (0.6, 0.4), seed=0)

print("stage one: adversarial + cycle + wavelet terms")
r1 = train_stage1(cfg, split, root / "s1", seed=0)
for row in r1.history:
    print("  " + "  ".join(f"{k} {v:.4f}" for k, v in row.items() if k != "step"))

print("stage two: adds the prior regeneration term, texture encoder frozen")
r2 = train_stage2(cfg, split, root / "s2", seed=0, stage1_checkpoint=r1.checkpoint)
for row in r2.history:
    print(f"  step {row['step']:.0f}  loss_diff {row['loss_diff']:.4f}  total {row['loss_total']:.4f}")

meta, _ = load_checkpoint(r2.checkpoint)
print(f"checkpoint groups: {meta['groups']}, frozen: {meta['frozen']}")
print(f"artifacts in {root}")
