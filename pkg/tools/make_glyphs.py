"""Render the A/B/C glyph masks shipped in ``neuralct/assets``.

Run once; the output is committed. Uses the DejaVu Sans Bold face bundled
with matplotlib so the result does not depend on system fonts.
"""
from pathlib import Path

import numpy as np
from matplotlib import font_manager
from PIL import Image, ImageDraw, ImageFont

SIZE = 512
HEIGHT_FRACTION = 0.55
OUT = Path(__file__).resolve().parents[1] / "src" / "neuralct" / "assets"


def render(letter, font):
    img = Image.new("L", (SIZE, SIZE), 0)
    draw = ImageDraw.Draw(img)
    left, top, right, bottom = draw.textbbox((0, 0), letter, font=font)
    x = (SIZE - (right - left)) / 2 - left
    y = (SIZE - (bottom - top)) / 2 - top
    draw.text((x, y), letter, fill=255, font=font)
    # flip so that array row 0 is y=-1 (bottom of the field of view)
    return np.asarray(img)[::-1] > 127


def main():
    path = font_manager.findfont(font_manager.FontProperties(family="DejaVu Sans", weight="bold"))
    font = ImageFont.truetype(path, size=int(SIZE * HEIGHT_FRACTION / 0.73))
    masks = {letter: render(letter, font) for letter in "ABC"}
    for letter, mask in masks.items():
        rows = np.flatnonzero(mask.any(1))
        print(letter, "rows", rows.min(), rows.max(), "fill", mask.mean().round(3))
    np.savez_compressed(
        OUT / "glyphs.npz",
        **{letter: np.packbits(mask, axis=-1) for letter, mask in masks.items()},
        size=SIZE,
    )


if __name__ == "__main__":
    main()
