"""Calibration for structural-task learnability (SPD/CN RMSE)."""
import sys
import time

import numpy as np

from gofa.compressor import ModelConfig
from gofa.corpus import CorpusConfig, gen_structural_corpus, split_corpus
from gofa.evaluation import evaluate_structural
from gofa.model import GofaModel
from gofa.training import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1200
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 1.5e-3
n_graphs = int(sys.argv[3]) if len(sys.argv) > 3 else 2500

t0 = time.time()
ccfg = CorpusConfig(n_graphs=n_graphs, nodes_low=8, nodes_high=12, n_selected=3,
                    question_style="compact", rng_seed=1)
spd, cn = gen_structural_corpus(ccfg)
spd_train, spd_test = split_corpus(spd, 0.04, seed=2)
cn_train, cn_test = split_corpus(cn, 0.04, seed=2)
train_set = spd_train + cn_train
print(f"corpus: {len(train_set)} train samples, {len(spd_test)}+{len(cn_test)} test in {time.time()-t0:.0f}s", flush=True)

mcfg = ModelConfig(d_model=32, n_heads=4, n_layers=6, memory_tokens=4, gnn_layers=(3, 4, 5), max_seq_len=96)
model = GofaModel(mcfg, seed=11)

eval_set = spd_test[:40] + cn_test[:40]
untrained = evaluate_structural(model, eval_set, max_new_tokens=48)
print(f"untrained: spd_rmse {untrained.metrics.get('spd_rmse'):.3f} cn_rmse {untrained.metrics.get('cn_rmse'):.3f} "
      f"({time.time()-t0:.0f}s)", flush=True)

tcfg = TrainConfig(lr=lr, weight_decay=0.0, grad_clip=1.0, batch_size=8,
                   max_steps=steps, seed=4, log_every=100)
report = train(model, train_set, tcfg)
print(f"trained {steps} steps in {time.time()-t0:.0f}s, curve {[round(r['loss'],3) for r in report.log_rows]}", flush=True)

trained = evaluate_structural(model, eval_set, max_new_tokens=48)
print(f"trained: spd_rmse {trained.metrics.get('spd_rmse'):.3f} (need <0.5) "
      f"cn_rmse {trained.metrics.get('cn_rmse'):.3f} (need <0.75)")
print(f"exact rates: spd {trained.metrics.get('spd_path_exact_rate'):.2f} cn {trained.metrics.get('cn_set_exact_rate'):.2f}")
print(f"miss rates: spd {trained.notes.get('spd_miss_rate'):.2f} cn {trained.notes.get('cn_miss_rate'):.2f}")
for row in trained.transcripts[:6]:
    print("  gen:", repr(row["generated"][:90]), "| label:", repr(row["label"][:60]))
print(f"total {time.time()-t0:.0f}s")
