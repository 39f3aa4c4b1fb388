"""Export pseudo prompt embeddings and feed them to the fusion network.

Run from the repository root:

    python3 demos/03_prompt_embeddings.py

The embed-export package writes a small binary table with one embedding
per (class, view) prompt.  The distillation side loads that table and the
fusion network turns each class's three embeddings into per-view weights.
"""

import tempfile
from pathlib import Path

import numpy as np

from embed_export.exporter import ExportJob, export
from mvdistill.embeddings import WeightNet, load_embeddings, weightnet_forward
from mvdistill.tensor import Tensor

class_names = ["coarse disk", "fine disk", "coarse diamond", "fine diamond"]

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "prompts.emb"
    job = ExportJob(class_names=class_names, output_path=str(path), mode="pseudo", pseudo_seed=1)
    count = export(job)
    print(f"exported {count} embeddings ({path.stat().st_size} bytes)")

    table = load_embeddings(path)
    print(f"classes in table: {table.classes()}")

    weightnet = WeightNet(table.dim, seed=42)
    print("\nper-class fusion weights from the untrained weight network:")
    print(f"{'class':15s}  w_rgb   w_edge  w_hf")
    for name in class_names:
        e_rgb, e_edge, e_hf = table.lookup_class(name)
        w = weightnet_forward(
            weightnet,
            Tensor(np.asarray(e_rgb, dtype=np.float64)),
            Tensor(np.asarray(e_edge, dtype=np.float64)),
            Tensor(np.asarray(e_hf, dtype=np.float64)),
        )
        print(f"{name:15s}  {w.data[0]:.4f}  {w.data[1]:.4f}  {w.data[2]:.4f}")

print("\nthe weights always sum to 1; during distillation the network is")
print("trained jointly with the student, so they drift apart per class.")
