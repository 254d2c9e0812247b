"""2-bit weight packing and the unpack-on-the-fly matmul.

Four trits fit in a byte (v + 1 per 2-bit field, first element in the most
significant bits), cutting weight storage 16x versus float32. The packed
matmul unpacks row tiles on demand, so the dense effective weights never
need to be materialized all at once.
"""

import numpy as np

from tridiff import pack, packed_linear, ternarize, unpack
from tridiff.bitpack import pack_matrix

rng = np.random.default_rng(1)

trits = np.array([1, 0, -1, 0, -1, 1])
payload = pack(trits)
print(f"trits  {trits.tolist()}")
print(f"packed {payload.hex()} ({len(payload)} bytes, 2 pad fields)")
print(f"unpack {unpack(payload, len(trits)).tolist()}")

# Pack a quantized layer and run the forward pass from the payload.
w = rng.normal(0.0, 0.1, (32, 64)).astype(np.float32)
t = ternarize(w, alpha=0.1)
p = pack_matrix(t.codes, t.alpha)
print(f"\nlayer 32x64: dense {4 * w.size} B -> payload {p.nbytes} B "
      f"({4 * w.size / p.nbytes:.1f}x smaller)")

x = rng.standard_normal((8, 64)).astype(np.float32)
dense_out = x @ t.effective_weights().T
packed_out = packed_linear(x, p)
tiled_out = packed_linear(x, p, row_tile=4)
print("single-shot packed matmul equals dense:", np.array_equal(packed_out, dense_out))
print("tiled (4 rows at a time) max deviation:",
      float(np.abs(tiled_out - dense_out).max()))
