#!/usr/bin/env python3
"""Generate synthetic click logs for demos and smoke runs."""

from __future__ import annotations

import argparse

from resus.core.synthetic import make_synthetic_logs, write_tabular


def main():
    parser = argparse.ArgumentParser(
        description="Generate synthetic click logs as a CSV for the tabular preset.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s data/synthetic.csv
  %(prog)s data/synthetic.csv --users 2000 --items 300 --seed 42
        """,
    )

    parser.add_argument(
        "output",
        help="Target CSV file (required)",
    )
    parser.add_argument(
        "--users",
        "-n",
        type=int,
        default=500,
        help="Number of users (default: 500)",
    )
    parser.add_argument(
        "--items",
        type=int,
        default=120,
        help="Number of items (default: 120)",
    )
    parser.add_argument(
        "--max-history",
        type=int,
        default=60,
        help="Longest user history (default: 60)",
    )
    parser.add_argument(
        "--user-strength",
        type=float,
        default=1.5,
        help="Weight of the per-user preference in the click logit (default: 1.5)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=0,
        help="Random seed (default: 0)",
    )

    args = parser.parse_args()

    raw = make_synthetic_logs(
        n_users=args.users,
        n_items=args.items,
        max_history=args.max_history,
        user_strength=args.user_strength,
        seed=args.seed,
    )
    write_tabular(raw, args.output)
    n_rows = sum(len(log.rows) for log in raw.logs)
    print(f"Wrote {n_rows} interactions from {len(raw.logs)} users to {args.output}")


if __name__ == "__main__":
    main()
