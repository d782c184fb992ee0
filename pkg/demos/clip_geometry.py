"""
From a cow box to a 256x256 training crop
=========================================

A box near the right edge of a 1920x1080 frame is squared about its
centre; the part of the square outside the frame is zero padded.
"""

import numpy as np

from herdpipe.clipgeom import (
    TimeInterval, CropTransform, crop_filter, crop_pixel_grid, double_segment, square_box,
)
from herdpipe.tracks import BBox

box = BBox(1900, 100, 100, 40)
sq = square_box(box)
print("box", box, "-> square", sq)

t = CropTransform(sq, 1920, 1080, 256)
xs, ys, pad = crop_pixel_grid(t)
first_pad = int(np.argmax(pad[0]))
print(f"scale {t.scale:.4f} source px per output px; output columns >= {first_pad} are padding")
print("ffmpeg filter:", crop_filter(t))

# annotated behaviour segments are doubled about their centre for context
seg = TimeInterval(2_000, 10_000)
print(seg, "->", double_segment(seg, 3_600_000))
