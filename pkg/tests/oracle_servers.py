"""Tiny external predictors used by the adapter tests. Run as ``python oracle_servers.py MODE``."""

from __future__ import annotations

import json
import sys
import time

KITCHEN = json.dumps({"room": "kitchen", "confidence": 0.8,
                      "objects": [{"name": "stove", "p": 0.7}, {"name": "sink", "p": 0.6}]})


def main(mode: str) -> None:
    for line in sys.stdin:
        json.loads(line)
        if mode == "echo":
            out = KITCHEN
        elif mode == "garbage":
            out = "Room: kitchen (confidence: 0.8)"
        elif mode == "slow":
            time.sleep(5)
            out = KITCHEN
        else:
            return
        sys.stdout.write(out + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main(sys.argv[1])
