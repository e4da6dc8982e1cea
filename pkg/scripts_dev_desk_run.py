"""Dev-only: full desk-scale run to validate the trained-behavior criteria."""
import json
import time

import numpy as np
from scipy import stats as sstats

from exposhift.conditioning import fit_norm_stats
from exposhift.harness import (
    Checkpoint,
    TrainConfig,
    group_cv_report,
    save_checkpoint,
    split_groups,
    train_bpn,
    train_esn,
)
from exposhift.synthcam import generate_dataset

t0 = time.time()
groups = generate_dataset(48, extent=288, seed=11)
print(f"[{time.time()-t0:6.1f}s] generated 48 groups", flush=True)

cfg = TrainConfig(data_seed=11, init_seed=12, train_seed=13)
train_idx, val_idx = split_groups(len(groups), cfg.val_fraction, cfg.data_seed)
stats = fit_norm_stats([groups[i] for i in train_idx])
print(f"[{time.time()-t0:6.1f}s] stats fitted; train={len(train_idx)} val={len(val_idx)}", flush=True)

params, esn_cfg, log = train_esn(groups, stats, cfg)
t_esn = time.time() - t0
print(f"[{t_esn:6.1f}s] ESN done. val losses:", flush=True)
print("  epoch1:", log.val_loss[0], "final:", log.val_loss[-1],
      "ratio:", log.val_loss[-1] / log.val_loss[0], flush=True)
print("  train:", [round(x, 4) for x in log.train_loss], flush=True)
print("  val:  ", [round(x, 4) for x in log.val_loss], flush=True)

bpn_params, bpn_cfg, blog = train_bpn(groups, params, esn_cfg, stats, cfg)
print(f"[{time.time()-t0:6.1f}s] BPN done. train: {[round(x,6) for x in blog.train_loss]}", flush=True)
print("  val:", [round(x, 6) for x in blog.val_loss], flush=True)

ckpt = Checkpoint(esn_config=esn_cfg, esn_params=params, stats=stats,
                  bpn_config=bpn_cfg, bpn_params=bpn_params)
save_checkpoint(ckpt, "/tmp/desk.esbp")

held = [groups[i] for i in val_idx]
rows = group_cv_report(held, ckpt, group_ids=val_idx)
print(f"[{time.time()-t0:6.1f}s] CV report:", flush=True)
for r in rows:
    print("  ", {k: round(v, 4) if isinstance(v, float) else v for k, v in r.items()}, flush=True)

improved = sum(1 for r in rows if r["post_cv"] < r["pre_cv"])
median_post = float(np.median([r["post_cv"] for r in rows]))
rho, p = sstats.spearmanr([r["mean_t0"] for r in rows], [r["mean_t1"] for r in rows])
print(json.dumps({
    "esn_minutes": round(t_esn / 60, 2),
    "total_minutes": round((time.time() - t0) / 60, 2),
    "val_ratio": log.val_loss[-1] / log.val_loss[0],
    "cv_improved": f"{improved}/{len(rows)}",
    "median_post_cv": median_post,
    "spearman_t0_t1": rho,
}), flush=True)
