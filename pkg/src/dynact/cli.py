"""Command-line entry point.

Usage:
    dynact <experiment> [--config FILE] [--set key.path value]...

The experiment name selects the runner; --config supplies a JSON document
(either a raw config or a previously written manifest.json, whose resolved
config is reused verbatim for exact reruns); --set overrides single keys
dot-path style. Exit codes: 0 success, 2 config error, 3 numerical abort,
4 check/acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .autodiff import ConfigError, DynactError, NumericsError
from .experiments import (EXPERIMENT_KINDS, apply_override, merge_config,
                          run_experiment)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK_FAILED = 4


def _load_config_document(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    # a manifest wraps the resolved config under "config"
    return doc["config"] if "config" in doc and isinstance(doc["config"], dict) else doc


def build_config(argv_experiment: str | None, config_path: str | None,
                 overrides: list[list[str]]) -> dict:
    user = _load_config_document(config_path)
    if argv_experiment:
        user["experiment"] = argv_experiment
    cfg = merge_config(user)
    for key, value in overrides or []:
        apply_override(cfg, key, value)
    return cfg


def _digest(result: dict) -> str:
    lines = [f"experiment: {result.get('experiment')}"]
    for k, v in result.items():
        if k == "experiment":
            continue
        if isinstance(v, (list, dict)) and len(str(v)) > 200:
            lines.append(f"  {k}: ({type(v).__name__}, {len(v)} entries)")
        else:
            lines.append(f"  {k}: {v}")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dynact", description=__doc__)
    parser.add_argument("experiment", nargs="?", choices=EXPERIMENT_KINDS,
                        help="experiment to run (may also come from the config file)")
    parser.add_argument("--config", help="JSON config or manifest.json path")
    parser.add_argument("--set", dest="overrides", nargs=2, action="append",
                        metavar=("KEY.PATH", "VALUE"),
                        help="override one config key, e.g. --set optimizer.lr 0.01")
    args = parser.parse_args(argv)

    try:
        cfg = build_config(args.experiment, args.config, args.overrides)
        result = run_experiment(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except DynactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    print(_digest(result))
    if cfg["experiment"] == "gradcheck" and not result["all_passed"]:
        return EXIT_CHECK_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
