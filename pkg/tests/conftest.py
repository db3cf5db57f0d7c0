import csv

import numpy as np
import pytest

from frodo.tensor_io import FeatureTensor, write_array, write_tensor

D_L1 = 64


def make_dataset(root, n_in=12, n_ood=5, seed=0, shift=6.0, with_softmax=True):
    """Synthetic single-layer (L1) dataset on disk: FTEN files + manifest.

    Tensors are (1,1,64) so spatial pooling is the identity; OOD samples
    are mean-shifted. Returns the manifest path.
    """
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=D_L1)
    rows = []
    for i in range(n_in + n_ood):
        is_ood = i >= n_in
        label = "ood" if is_ood else "in"
        x = mu + rng.normal(size=D_L1) + (shift if is_ood else 0.0)
        name = f"{label}{i}_l1.ften"
        write_tensor(FeatureTensor(x.reshape(1, 1, D_L1).astype(np.float32)), root / name)
        sm_name = ""
        if with_softmax:
            p = rng.uniform(0.5, 0.99) if not is_ood else rng.uniform(0.3, 0.9)
            sm_name = f"{label}{i}_sm.ften"
            write_array(np.array([p, 1 - p], dtype=np.float32), root / sm_name)
        rows.append((f"{label}{i}", label, name, sm_name))
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["sample_id", "label", "L1", "L2", "L3", "L4", "L5", "softmax"])
        for sid, label, l1, sm in rows:
            w.writerow([sid, label, l1, "", "", "", "", sm])
    return manifest


@pytest.fixture
def dataset(tmp_path):
    return make_dataset(tmp_path)
