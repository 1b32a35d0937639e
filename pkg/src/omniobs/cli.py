"""Command line entry point: ``omniobs --config run.json --out results/``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .exceptions import ConfigInvalid, ConstraintViolation, NonFinite
from .runner import load_config, run, summarize

EXIT_OK, EXIT_CONFIG, EXIT_CONSTRAINT, EXIT_NONFINITE = 0, 1, 2, 3


def build_parser():
    p = argparse.ArgumentParser(prog="omniobs", description="Run a distributed observer experiment.")
    p.add_argument("--config", required=True, metavar="PATH", help="JSON experiment config")
    p.add_argument("--out", metavar="DIR", help="output directory (no files written if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--summary", action="store_true", help="print a pass/fail verdict per criterion")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        out = run(cfg, args.out, args.seed)
    except ConfigInvalid as e:
        print("invalid config:", file=sys.stderr)
        for field, msg in e.errors.items():
            print(f"  {field}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except ConstraintViolation as e:
        print(f"constraint violation: {e}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except NonFinite as e:
        print(f"simulation diverged: {e} (last finite t={e.time})", file=sys.stderr)
        return EXIT_NONFINITE
    if args.summary:
        verdict = summarize(out.metrics, cfg.get("thresholds"))
        for name, v in verdict["criteria"].items():
            print(f"{'PASS' if v['passed'] else 'FAIL'} {name}: value={json.dumps(v['value'])} "
                  f"threshold={json.dumps(v['threshold'])}")
        print("overall:", "PASS" if verdict["passed"] else "FAIL")
    for name, path in out.files.items():
        logging.getLogger(__name__).info("wrote %s: %s", name, path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
