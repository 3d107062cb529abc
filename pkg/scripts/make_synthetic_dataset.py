#!/usr/bin/env python3
"""Write the synthetic street or underpass fixture (models, GNSS, images, masks, config)."""
import argparse
import logging

from lodloc.features import Method
from lodloc.synthetic import STREET_INTRINSICS, write_street_dataset, write_underpass_dataset
from lodloc.virtual_camera import CameraIntrinsics


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("kind", choices=("street", "underpass"))
    p.add_argument("out", help="output directory")
    p.add_argument("--frames", type=int, default=24, help="street frames")
    p.add_argument("--width", type=int, default=STREET_INTRINSICS.width)
    p.add_argument("--height", type=int, default=STREET_INTRINSICS.height)
    p.add_argument("--focal", type=float, default=STREET_INTRINSICS.principal_distance, help="pixels")
    p.add_argument("--methods", nargs="+", default=[m.value for m in Method], choices=[m.value for m in Method])
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    k = CameraIntrinsics(a.width, a.height, a.focal)
    if a.kind == "street":
        cfg = write_street_dataset(a.out, a.frames, k, a.methods, seed=a.seed)
    else:
        cfg = write_underpass_dataset(a.out, k, a.methods, seed=a.seed)
    print(cfg)


if __name__ == "__main__":
    main()
