"""
AUC, partial AUC and picking a model per machine type
=====================================================
"""
import numpy as np

from soundsieve.evaluate import (MachineReport, MachineScore, auc, p_auc, render_report,
                                 roc_curve, select_mixed)

# AUC is the chance a random anomaly outscores a random normal clip
scores = [0.2, 0.3, 0.35, 0.4, 0.8, 0.9]
labels = ["normal", "normal", "anomaly", "normal", "anomaly", "anomaly"]
print("AUC", auc(scores, labels))

# pAUC only looks at false-positive rates up to 10%, rescaled so that
# chance is 50 and perfect is 100
print("pAUC", p_auc(scores, labels))
print("pAUC, all ties", p_auc([1.0] * 6, labels))
fpr, tpr = roc_curve(scores, labels)
print(np.c_[fpr, tpr])

# per-machine results for two families; each type keeps the family with
# the better mean AUC, ties go to the cheaper dense model
dense = MachineReport("dense", [MachineScore("fan", "00", 56.73, 49.72),
                                MachineScore("fan", "02", 79.60, 54.00),
                                MachineScore("slider", "00", 96.12, 82.30)])
conv = MachineReport("conv", [MachineScore("fan", "00", 51.77, 49.05),
                              MachineScore("fan", "02", 72.71, 55.51),
                              MachineScore("slider", "00", 98.86, 94.47)])
choice = select_mixed({"dense": dense, "conv": conv})
print(choice)
print(render_report({"dense": dense, "conv": conv}, mixed=choice))
