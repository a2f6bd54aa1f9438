"""Backbone MACs against input size and bottleneck width.

    python scripts/backbone_flops.py
"""
from lighthead.backbone import backbone_flops
from lighthead.config import BackboneSpec

REFERENCE = 145e6


def main():
    print("input  mid widths        MACs        vs 145M")
    for mids in [(32, 64, 128), (48, 96, 192), (72, 144, 288)]:
        spec = BackboneSpec(mid_channels=mids)
        for size in (224, 448):
            macs = backbone_flops(size, size, spec).macs
            dev = f"{macs / REFERENCE - 1:+8.1%}" if size == 224 else "       -"
            print(f"{size:>5}  {str(mids):<16} {macs:>12,}  {dev}")


if __name__ == "__main__":
    main()
