"""Head cost of the three head designs as the number of RoIs grows.

    python scripts/cost_table.py [--num-classes 80] [--rois 0 100 300 1000 2000]
"""
import argparse

from lighthead.cost import VARIANTS, coco_design, compare_designs, head_cost


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--num-classes", type=int, default=80)
    ap.add_argument("--rois", type=int, nargs="+", default=[0, 100, 300, 1000, 2000])
    args = ap.parse_args()
    designs = [coco_design(v, num_classes=args.num_classes) for v in VARIANTS]
    for d in designs:
        rep = head_cost(d)
        print(f"{d.variant:<16} map channels {d.map_channels:>5}  map memory {rep.extras['map_activation_values']:>12,}")
    print()
    print(compare_designs(designs, args.rois).format())


if __name__ == "__main__":
    main()
