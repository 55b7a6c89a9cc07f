"""The supervised consumer: grid encoding, the five-term detection loss,
anchors from IoU k-means, a short training run, and the evaluation stack
(sensitivity/FP, FROC, CPM).
"""

import numpy as np

from ganlab import detector as D
from ganlab import metrics as M
from ganlab import phantom as ph

spec = D.YoloGridSpec(s=4, b=2, classes=1)

# Encoding puts each object into one responsible cell slot.
norm_boxes = [(0.3, 0.4, 0.2, 0.25)]
grid = D.encode_boxes(norm_boxes, spec)
print("responsible cells:", np.argwhere(grid[4] == 1.0).tolist())

# The loss is zero at a perfect prediction; each term is checkable alone.
print("perfect-prediction loss:", D.yolo_loss(grid.copy(), grid, spec).item())
off = grid.copy()
gy, gx = np.argwhere(grid[4] == 1.0)[0]
off[0, gy, gx] += 0.1
print("x off by 0.1 with coord weight 5:", round(D.yolo_loss(off, grid, spec).item(), 6))

# Anchors: IoU k-means over observed (h, w) shapes, recalculated per setup.
shapes = [(0.1, 0.12)] * 5 + [(0.5, 0.45)] * 5
anchors = D.compute_anchors(shapes, k=2, seed=0)
print("anchors:", np.round(anchors.anchors, 3).tolist())

# Train the tiny detector on phantom slices and evaluate.
images, boxes = [], []
for i in range(32):
    scene = ph.generate_phantom(i, dims=2, extent=32, lesion_count=1)
    images.append(ph.render(scene)[None])
    boxes.append(scene.boxes)
images = np.stack(images).astype(np.float32)

model = D.train_supervised(images[:24], boxes[:24], images[24:28], boxes[24:28],
                           spec=spec, schedule=D.TrainSchedule(epochs=6, batch_size=8),
                           seed=0)
print("best validation sensitivity:", round(model.best_sensitivity, 3))

extent = 32
truths = [[(b.origin[0] / extent, b.origin[1] / extent,
            (b.origin[0] + b.extent[0]) / extent,
            (b.origin[1] + b.extent[1]) / extent) for b in bl] for bl in boxes[28:]]
dset = model.predict_units(images[28:], [f"t{i}" for i in range(4)],
                           detection_threshold=1e-4, truths=truths)
sens, fp = M.match_and_count(dset, iou_threshold=0.25)
print(f"test sensitivity {sens:.2f} at {fp:.1f} FPs/slice (threshold ~0)")

curve = M.froc(dset, 0.25)
print("CPM:", round(M.cpm(curve), 3))
print("sensitivity at 1/2/4 FPs per slice:",
      [round(curve.sensitivity_at(r), 3) for r in (1, 2, 4)])
