#!/usr/bin/env python3
"""Run a dataset config and print the LoD2 vs LoD3 comparison per method.

Example:
    python3 scripts/make_synthetic_dataset.py street /tmp/street
    python3 scripts/lod_comparison.py /tmp/street/config.json --workers 2
"""
import argparse

from lodloc.features import METHOD_LABELS
from lodloc.pipeline import emit_report, load_config, run_trajectory


def _f(v, fmt="{:.2f}"):
    return "-" if v is None or v != v else fmt.format(v)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="report directory (default: the config's out_dir)")
    a = p.parse_args(argv)
    cfg = load_config(a.config)
    stats = run_trajectory(cfg, a.workers)
    emit_report(stats, a.out or cfg.out_dir)
    head = f"{'method':32s} {'LoD2':>7s} {'LoD3':>7s} {'gain':>6s}   {'sigma X/Y/Z LoD2':>24s}   {'sigma X/Y/Z LoD3':>24s}"
    print(stats.area)
    print(head)
    for ms in stats.methods:
        l2, l3 = ms.lod2, ms.lod3
        g = ms.gain("features")
        s2 = "/".join(_f(v) for v in l2.median_sigma) if l2 else "-"
        s3 = "/".join(_f(v) for v in l3.median_sigma) if l3 else "-"
        print(f"{METHOD_LABELS[ms.method]:32s} {_f(l2 and l2.median_features, '{:g}'):>7s} "
              f"{_f(l3 and l3.median_features, '{:g}'):>7s} {_f(g, '{}%'):>6s}   {s2:>24s}   {s3:>24s}")


if __name__ == "__main__":
    main()
