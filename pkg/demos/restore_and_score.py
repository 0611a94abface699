"""Train briefly, restore held-out images, and read the evaluation report."""

import json
import tempfile
from pathlib import Path

from texdeblur.config import desk_config
from texdeblur.data import load_train_pairs, make_synthetic_corpus, split_unpaired
from texdeblur.inference import build_runtime, evaluate, infer_file
from texdeblur.training import train_stage1, train_stage2

cfg = desk_config().with_values(
    data__image_size=48,
    data__train_scenes=6,
    data__val_scenes=3,
    data__patch=32,
    data__batch=2,
    deblur__blocks=[1, 1, 1, 1],
    deblur__heads=[1, 1, 2, 2],
    train__stage1_steps=4,
    train__stage2_steps=3,
)
root = Path(tempfile.mkdtemp(prefix="texdeblur_demo_"))
corpus = root / "corpus"
make_synthetic_corpus(corpus, cfg, seed=0)
split = split_unpaired(load_train_pairs(corpus), (0.6, 0.4), seed=0)
r1 = train_stage1(cfg, split, root / "s1", seed=0)
r2 = train_stage2(cfg, split, root / "s2", seed=0, stage1_checkpoint=r1.checkpoint)

# the runtime rebuilds only the restorer and the prior sampler; neither the
# texture encoder nor the reblurring net exists at inference
runtime = build_runtime(r2.checkpoint)
print("runtime modules:", [k for k, v in vars(runtime).items() if v is not None])

out = infer_file(r2.checkpoint, corpus / "val" / "blurry" / "val0000.png", root / "restored.png", seed=0)
print(f"restored one image -> {out}")

report = evaluate(r2.checkpoint, corpus, corpus / "val_manifest.jsonl", root / "eval", seed=0)
print(f"evaluated {report['n_images']} images, skipped {report['n_skipped']}")
for side in ("blurry", "restored", "gain"):
    stats = report[side]
    print(f"  {side:9s} psnr median {stats['psnr_median']:7.3f}  ssim mean {stats['ssim_mean']:.4f}")
print(f"full report: {root / 'eval' / 'report.json'}")
print(json.dumps(report["gain"], indent=2))
