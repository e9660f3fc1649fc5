"""
Training EMS-Net on a synthetic scene
=====================================

Sample 100 unchanged and 100 changed pixels, train the siamese network with
the hybrid contrastive + cross-entropy objective, and score the whole map.

The default is a short 30-epoch run; pass a number on the command line for
more (200 matches the full protocol and takes about two minutes).
"""

import sys

from emsnet import formats, hsi
from emsnet.metrics import color_counts, evaluate, render_error_map
from emsnet.train import TrainConfig, predict_scene, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
pair = hsi.generate_synthetic_pair(64, 64, 16, 3, 0.02, seed=7)

cfg = TrainConfig(epochs=epochs)
params, log = train(pair, cfg)
shown = log[:: max(1, epochs // 10)]
for entry in shown + ([log[-1]] if shown[-1] is not log[-1] else []):
    print("epoch %3d  supcon %.4f  bce %.4f  lr %.2e" % (entry["epoch"], entry["l_supcon"], entry["l_croent"], entry["lr"]))

# Every pixel's 5x5 patch pair goes through the network
change = predict_scene(pair, params, cfg)
report = evaluate(change.binary, pair.reference)
print("\nOA %.4f  Kappa %.4f  F1 %.4f" % (report.oa, report.kappa, report.f1))

# False alarms are red and omissions green
errors = render_error_map(change.binary, pair.reference)
print(color_counts(errors))
formats.write_ppm("errors.ppm", errors)
formats.write_pfg("prob.pfg", change.prob)
