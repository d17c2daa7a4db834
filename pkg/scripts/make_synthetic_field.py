"""Write the synthetic 8-snapshot field used by configs/gridded_benchmark.json.

A vortex that reverses its rotation while its center drifts on a circle, sampled
on the 10x10 cell centers every 2 s over [0, 14] s.
"""

import argparse
from pathlib import Path

import numpy as np

from tvmdp.disturbance import make_vortex, sample_series, save_field_file


def synthetic_series():
    src = make_vortex(
        (5.0, 5.0), 0.12, angular_rate=2 * np.pi / 28, orbit_radius=1.5, strength_rate=-0.04, horizon=6.0
    )
    return sample_series(src, 10, 10, np.linspace(0.0, 14.0, 8))


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument(
        "out", nargs="?", type=Path,
        default=Path(__file__).resolve().parents[1] / "configs" / "fields" / "synthetic_8_snapshots.json",
    )
    args = p.parse_args()
    save_field_file(synthetic_series(), args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
