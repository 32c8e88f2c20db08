"""Regenerates the bundled test fixtures. Output is committed; tests never run this."""
import json
import struct

import numpy as np

rng = np.random.default_rng(20240601)
centres = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
rows = np.concatenate([c + rng.normal(scale=1.0, size=(100, 2)) for c in centres]).astype("<f4")

with open("blobs300.sfte", "wb") as f:
    f.write(b"SFTE")
    f.write(struct.pack("<IQQ", 1, rows.shape[0], rows.shape[1]))
    f.write(rows.tobytes(order="C"))

with open("blobs300.jsonl", "w") as f:
    for i in range(300):
        rec = {"instruction": f"Describe point {i}.", "input": None,
               "response": f"Point {i} belongs to blob {i // 100}."}
        f.write(json.dumps(rec) + "\n")
