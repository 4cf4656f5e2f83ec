"""BR, CC and ECC side by side, plus the label-duplication case where chaining pays.

Baselines always read every modality, so their cost is just the sum of
modality costs.
"""

import numpy as np

from mcc.baselines import baseline_cost, train_br, train_cc, train_ecc
from mcc.dataset import ModalitySchema, MultiModalDataset, Standardizer, make_folds, make_synthetic
from mcc.metrics import cv_aggregate, evaluate, markdown_table

data = make_synthetic(400, [8, 8, 4], 5, seed=11)
folds = make_folds(data.n_instances, 5, seed=1)
per_algo = {"BR": [], "CC": [], "ECC": []}
for k in range(5):
    train, test = data.subset(folds.train_index(k)), data.subset(folds.test_index(k))
    sc = Standardizer.fit(train.X)
    train, test = sc.transform(train), sc.transform(test)
    models = {"BR": train_br(train), "CC": train_cc(train), "ECC": train_ecc(train, 5, seed=k)}
    for name, model in models.items():
        per_algo[name].append(evaluate(model.predict(test.X), test.Y, baseline_cost(data)))
print(markdown_table({name: cv_aggregate(f) for name, f in per_algo.items()}))

# a second label that copies the first: CC can read it straight off the history column
rng = np.random.default_rng(0)
y = np.where(rng.random(300) < 0.5, 1, -1)
X = y[:, None] * 0.3 + rng.normal(size=(300, 6))
dup = MultiModalDataset(X, np.c_[y, y], ModalitySchema([3, 3]))
tr, te = dup.subset(range(200)), dup.subset(range(200, 300))
cc = train_cc(tr, (0, 1))
print("CC stage-2 weights (last = history):", np.round(cc.models[1].w, 2))
print("label-2 accuracy  CC", np.mean(cc.predict(te.X)[:, 1] == te.Y[:, 1]),
      " BR", np.mean(train_br(tr).predict(te.X)[:, 1] == te.Y[:, 1]))
