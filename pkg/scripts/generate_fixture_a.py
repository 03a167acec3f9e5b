#!/usr/bin/env python3
"""
Write the demo capture matching sampledata/fixture_a.tsv: one laptop
talking to companies A-F with byte volumes 40/20/14/10/9/7 KB.

    python scripts/generate_fixture_a.py [out.pcap] [--spread-seconds N]

Spreading the packets over more seconds makes paced replays
(`hearthgate replay --speed 1`) nicer to watch on the dashboard.
"""

import argparse
import time

from hearthgate.flowcap import Transport, build_frame, write_pcap

LAPTOP = "aa:bb:cc:00:00:01"
GATEWAY = "02:00:00:00:00:01"
VOLUMES = [("A", 40_000), ("B", 20_000), ("C", 14_000), ("D", 10_000),
           ("E", 9_000), ("F", 7_000)]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", nargs="?", default="fixture_a.pcap")
    parser.add_argument("--spread-seconds", type=int, default=60)
    parser.add_argument("--start-ms", type=int, default=None,
                        help="first packet timestamp (default: now)")
    args = parser.parse_args()

    start = args.start_ms if args.start_ms is not None else int(time.time() * 1000)
    packets_per_company = 4
    total_packets = len(VOLUMES) * packets_per_company
    step = max(args.spread_seconds * 1000 // total_packets, 1)

    frames = []
    ts = start
    for i, (_name, total) in enumerate(VOLUMES):
        per = total // packets_per_company
        rem = total - per * packets_per_company
        for j in range(packets_per_company):
            size = per + (rem if j == 0 else 0)
            frames.append(
                (
                    ts,
                    build_frame(
                        LAPTOP, GATEWAY, "192.168.1.7", f"203.0.{i}.9",
                        40_000 + i, 443, Transport.TCP, payload_len=size - 54,
                    ),
                )
            )
            ts += step
    count = write_pcap(args.out, frames)
    print(f"wrote {count} packets to {args.out} "
          f"({sum(v for _, v in VOLUMES)} bytes across {len(VOLUMES)} companies)")


if __name__ == "__main__":
    main()
