"""Convert the Omniglot PNG release into ``omniglot.ldlt``.

Expects the unzipped ``images_background`` and ``images_evaluation``
directories (``<alphabet>/<character>/<drawing>.png``) under ``SRC``.
Characters are ordered background first, then evaluation, with alphabets,
characters and drawings each sorted by name. Every image is inverted so
strokes are bright, resized to 28x28 with bilinear filtering and stored as
uint8 in a (characters, drawers, 28, 28) LDLT tensor.

    pip install Pillow
    python scripts/omniglot_to_ldlt.py SRC DATA_DIR
"""
import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from ldl.data import write_raw_tensor

PARTS = ("images_background", "images_evaluation")


def character_dirs(src: Path) -> list[Path]:
    dirs = []
    for part in PARTS:
        root = src / part
        if not root.is_dir():
            raise FileNotFoundError(f"missing {root}")
        for alphabet in sorted(p for p in root.iterdir() if p.is_dir()):
            dirs.extend(sorted(p for p in alphabet.iterdir() if p.is_dir()))
    return dirs


def load_character(path: Path, size: int = 28) -> np.ndarray:
    out = []
    for png in sorted(path.glob("*.png")):
        img = Image.open(png).convert("L")
        img = Image.eval(img, lambda v: 255 - v).resize((size, size), Image.BILINEAR)
        out.append(np.asarray(img, dtype=np.uint8))
    return np.stack(out)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Convert Omniglot PNGs to omniglot.ldlt")
    parser.add_argument("src", type=Path)
    parser.add_argument("data_dir", type=Path)
    args = parser.parse_args(argv)

    chars = [load_character(d) for d in character_dirs(args.src)]
    drawers = {c.shape[0] for c in chars}
    if len(drawers) != 1:
        print(f"characters have differing drawing counts {sorted(drawers)}", file=sys.stderr)
        return 1
    images = np.stack(chars)
    args.data_dir.mkdir(parents=True, exist_ok=True)
    (args.data_dir / "omniglot.ldlt").write_bytes(write_raw_tensor(images))
    print(f"wrote {images.shape} to {args.data_dir / 'omniglot.ldlt'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
