#!/usr/bin/env python3
"""Print the norm-memory theory table: reduction ratio and modeled transient bytes per shape."""

import argparse

from dorafactor.memory import MiB, TABLE6_SHAPES, emit_theory_table, theoretical_reduction


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--budget-mb", type=int, default=256, help="norm chunk budget in MiB")
    a = p.parse_args(argv)

    print(f"{'d_out':>6} {'d_in':>6} {'r':>4} {'ratio':>7} {'dense MiB':>10} {'U+G KiB':>8} {'factored MiB':>13} {'chunks':>6}")
    for row in emit_theory_table(TABLE6_SHAPES, a.budget_mb * MiB):
        print(
            f"{row['d_out']:>6} {row['d_in']:>6} {row['rank']:>4} {row['theory_ratio']:>7.1f} "
            f"{row['dense_product_bytes'] / MiB:>10.1f} {row['u_plus_g_bytes'] / 1024:>8.0f} "
            f"{row['factored_transient_bytes'] / MiB:>13.1f} {row['num_chunks']:>6}"
        )
    print(f"\nsquare 8192x8192 at r=512: {theoretical_reduction(8192, 8192, 512):.1f}x")


if __name__ == "__main__":
    main()
