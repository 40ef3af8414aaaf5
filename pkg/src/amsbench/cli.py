"""Command line: ``amsbench {synth,prepare,train,report,all}``.

Failures print one ``error`` line on stderr of the form
``amsbench: error kind=<kind> exit=<code> detail=<text>`` and exit with a
code specific to the failure kind.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .cohort import CohortError, CohortParseError
from .config import ConfigError, load_config
from .features import FeatureConfigError, LeakError
from .pipeline import MissingArtifact, run_all, run_prepare, run_report, run_synth, run_train
from .prep import PrepError
from .synth import SynthConfigError

EXIT_GENERIC = 1
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_LEAK = 4
EXIT_MISSING = 5
EXIT_RUN_FAILED = 6


def _error(kind: str, code: int, detail: str) -> int:
    detail = " ".join(str(detail).split())
    print(f"amsbench: error kind={kind} exit={code} detail={detail}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file (default: packaged default.cfg)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel training processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="amsbench", description="stewardship prediction benchmark")
    p.add_argument("--version", action="version", version=f"amsbench {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic cohort into --out")
    sp = sub.add_parser("prepare", parents=[common], help="featurize a cohort into --out")
    sp.add_argument("--cohort", required=True, help="directory with the five table CSVs")
    sp.add_argument("--resolution", choices=["24h", "1h-fused", "both"],
                    help="override features.resolutions")
    st = sub.add_parser("train", parents=[common], help="train the model matrix into registry --out")
    st.add_argument("--prepared", required=True)
    sr = sub.add_parser("report", parents=[common], help="write results.csv and calibration files")
    sr.add_argument("--registry", required=True)
    sr.add_argument("--prepared", required=True)
    sub.add_parser("all", parents=[common], help="synth, prepare, train and report under --out")
    return p


def _load(args, extra_env=None):
    env = None
    if extra_env:
        import os
        env = dict(os.environ)
        env.update(extra_env)
    return load_config(args.config, env=env, seed=args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        return _error("config", EXIT_CONFIG, "--jobs must be at least 1")
    failed = []

    def echo(spec, status, msg):
        print(f"{status}\t{spec.slug}\t{msg}")
        if status == "failed":
            failed.append(spec.slug)
            _error("run", EXIT_RUN_FAILED, f"run={spec.slug} {msg}")

    try:
        extra = None
        if args.command == "prepare" and args.resolution:
            res = "24h, 1h-fused" if args.resolution == "both" else args.resolution
            extra = {"AMSBENCH_FEATURES_RESOLUTIONS": res}
            if args.resolution == "24h":
                extra["AMSBENCH_MATRIX_RESOLUTIONS"] = "24h"
        cfg = _load(args, extra)
        out = Path(args.out)
        if args.command == "synth":
            digest = run_synth(cfg, out)
            print(f"cohort\t{out}\tmanifest={digest}")
        elif args.command == "prepare":
            digest = run_prepare(cfg, args.cohort, out)
            print(f"prepared\t{out}\tmanifest={digest}")
        elif args.command == "train":
            run_train(cfg, args.prepared, out, args.jobs, echo)
        elif args.command == "report":
            path = run_report(cfg, args.registry, args.prepared, out)
            print(f"results\t{path}")
        elif args.command == "all":
            path = run_all(cfg, out, args.jobs, echo)
            print(f"results\t{path}")
    except (ConfigError, SynthConfigError) as exc:
        return _error("config", EXIT_CONFIG, f"field={exc.field} {exc}")
    except (FeatureConfigError, PrepError) as exc:
        return _error("config", EXIT_CONFIG, exc)
    except CohortParseError as exc:
        return _error("parse", EXIT_PARSE, exc)
    except CohortError as exc:
        return _error("parse", EXIT_PARSE, exc)
    except LeakError as exc:
        return _error("leak", EXIT_LEAK, exc)
    except MissingArtifact as exc:
        return _error("missing", EXIT_MISSING, exc)
    except Exception as exc:  # last resort, still machine-parseable
        return _error("internal", EXIT_GENERIC, f"{type(exc).__name__}: {exc}")
    if failed:
        return EXIT_RUN_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())
