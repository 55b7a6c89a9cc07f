import numpy as np

from ganlab import classifier as CLS
from ganlab.phantom import generate_phantom, render


def test_head_layer_order_is_fixed():
    g = CLS.build_classifier(in_res=32, seed=0)
    order = list(g.nodes)
    tail = [g.nodes[n].kind for n in order[order.index("cls/gap"):]]
    assert tail == ["mean", "dropout", "dense", "batch-norm", "sigmoid"]
    assert g.nodes["cls/drop"].attrs["rate"] == 0.5
    assert g.params["cls/head_w"].shape[1] == 2


def test_residual_blocks_have_skip_adds():
    g = CLS.build_classifier(in_res=32, seed=0, blocks=4)
    skips = [n for n, node in g.nodes.items() if node.kind == "add" and n.endswith("skip")]
    assert len(skips) == 4


def test_short_training_separates_easy_classes():
    imgs, labels = [], []
    for i in range(24):
        scene = generate_phantom(i, dims=2, extent=32, lesion_count=1 if i % 2 else 0)
        imgs.append(render(scene)[None])
        labels.append(1 if i % 2 else 0)
    images = np.stack(imgs).astype(np.float32)
    labels = np.array(labels)
    g = CLS.train_classifier(images, labels,
                             CLS.ClassifierSchedule(epochs=6, batch_size=8, learning_rate=5e-3),
                             seed=0)
    probs = CLS.classify(g, images)
    auc_pairs = sum((a > b) for a in probs[labels == 1] for b in probs[labels == 0])
    auc = auc_pairs / (probs[labels == 1].size * probs[labels == 0].size)
    assert auc > 0.7  # trivially separable phantoms


def test_eval_mode_is_deterministic():
    images = np.random.default_rng(0).normal(size=(4, 1, 32, 32)).astype(np.float32)
    g = CLS.build_classifier(in_res=32, seed=1)
    # run once in training mode to populate batch-norm running stats
    g.run({"image": images}, outputs="cls/out", training=True, rng=np.random.default_rng(0))
    p1 = CLS.classify(g, images)
    p2 = CLS.classify(g, images)
    np.testing.assert_array_equal(p1, p2)
