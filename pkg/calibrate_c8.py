"""Calibration for the prompt-edge ablation (lookup task)."""
import sys
import time

import numpy as np

from gofa.compressor import ModelConfig
from gofa.corpus import CorpusConfig, LOOKUP_VALUES, gen_lookup_corpus, split_corpus
from gofa.evaluation import evaluate_accuracy
from gofa.model import GofaModel
from gofa.training import TrainConfig, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
lr = float(sys.argv[2]) if len(sys.argv) > 2 else 1.5e-3
n_graphs = int(sys.argv[3]) if len(sys.argv) > 3 else 2000

t0 = time.time()
ccfg = CorpusConfig(n_graphs=n_graphs, lookup_facts=6, rng_seed=2)
mcfg = ModelConfig(d_model=32, n_heads=4, n_layers=6, memory_tokens=4, gnn_layers=(3, 4, 5), max_seq_len=64)

acc = {}
for mode in ("single", "double"):
    t1 = time.time()
    samples = gen_lookup_corpus(ccfg, mode)
    train_set, test_set = split_corpus(samples, 0.1, seed=3)
    model = GofaModel(mcfg, seed=13)
    tcfg = TrainConfig(lr=lr, weight_decay=0.0, grad_clip=1.0, batch_size=8,
                       max_steps=steps, seed=5, freeze=("compressor.", "memory_tokens"), log_every=100)
    report = train(model, train_set, tcfg)
    rep = evaluate_accuracy(model, test_set[:200], candidates=LOOKUP_VALUES, max_new_tokens=8)
    acc[mode] = rep.metrics["accuracy"]
    print(f"{mode}: acc {acc[mode]:.3f} over n={rep.metrics['n']}, {time.time()-t1:.0f}s, "
          f"curve {[round(r['loss'],3) for r in report.log_rows]}", flush=True)
    for row in rep.transcripts[:4]:
        print("   gen:", repr(row["generated"][:40]), "| label:", row["label"], "| ok:", row["correct"])

chance = 1 / len(LOOKUP_VALUES)
print(f"\nsingle {acc['single']:.3f} double {acc['double']:.3f} "
      f"margin {acc['double']-acc['single']:.3f} (need >= 0.15); chance {chance:.3f}")
print(f"total {time.time()-t0:.0f}s")
