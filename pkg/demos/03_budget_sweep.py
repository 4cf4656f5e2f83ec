"""Sweep the test-time budget and the confidence threshold for a trained model.

The thresholds only act at prediction time, so one trained chain gives the
whole cost/accuracy curve.
"""

import numpy as np

from mcc.dataset import Standardizer, make_folds, make_synthetic
from mcc.metrics import micro_f1
from mcc.training import TrainConfig, train_mcc

data = make_synthetic(300, [6, 6, 4], 4, signal=[1.0, 0.5, 0.2], costs=[1.0, 1.0, 1.0], seed=3)
folds = make_folds(data.n_instances, 5, seed=0)
train, test = data.subset(folds.train_index(0)), data.subset(folds.test_index(0))
scaler = Standardizer.fit(train.X)
train, test = scaler.transform(train), scaler.transform(test)

chain = train_mcc(train, TrainConfig(hidden=16, iterations=60, seed=0))

print("budget  ath   micro-F1  cost-average")
for ath in (0.7, 0.9, 1.0):
    for cth in (0.5, 1.05, 2.05, np.inf):
        pred = chain.predict(test, TrainConfig(cost_threshold=cth, confidence_threshold=ath))
        print(f"{cth:6.2f}  {ath:.1f}  {micro_f1(pred.Z, test.Y):8.3f}  {pred.cost_average():8.3f}")
