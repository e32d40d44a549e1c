"""Fixed 64-entry RGB palette used to color labeled clouds for inspection."""
import numpy as np

PALETTE = np.array([
    (  0,   0,   0), (128,   0,   0), (  0, 128,   0), (128, 128,   0),
    (  0,   0, 128), (128,   0, 128), (  0, 128, 128), (128, 128, 128),
    ( 64,   0,   0), (192,   0,   0), ( 64, 128,   0), (192, 128,   0),
    ( 64,   0, 128), (192,   0, 128), ( 64, 128, 128), (192, 128, 128),
    (  0,  64,   0), (128,  64,   0), (  0, 192,   0), (128, 192,   0),
    (  0,  64, 128), (128,  64, 128), (  0, 192, 128), (128, 192, 128),
    ( 64,  64,   0), (192,  64,   0), ( 64, 192,   0), (192, 192,   0),
    ( 64,  64, 128), (192,  64, 128), ( 64, 192, 128), (192, 192, 128),
    (  0,   0,  64), (128,   0,  64), (  0, 128,  64), (128, 128,  64),
    (  0,   0, 192), (128,   0, 192), (  0, 128, 192), (128, 128, 192),
    ( 64,   0,  64), (192,   0,  64), ( 64, 128,  64), (192, 128,  64),
    ( 64,   0, 192), (192,   0, 192), ( 64, 128, 192), (192, 128, 192),
    (  0,  64,  64), (128,  64,  64), (  0, 192,  64), (128, 192,  64),
    (  0,  64, 192), (128,  64, 192), (  0, 192, 192), (128, 192, 192),
    ( 64,  64,  64), (192,  64,  64), ( 64, 192,  64), (192, 192,  64),
    ( 64,  64, 192), (192,  64, 192), ( 64, 192, 192), (192, 192, 192),
], dtype=np.uint8)
PALETTE.setflags(write=False)


def colors_for(labels) -> np.ndarray:
    """RGB rows for label indices; indices past the table wrap around."""
    return PALETTE[np.asarray(labels, dtype=np.int64) % len(PALETTE)]
