"""``epde`` command line.

Exit codes: 0 success, 1 numerical failure, 2 usage, config or missing-input error.
"""
import argparse
import os
import sys

VERBS = ("generate", "scramble", "organize", "coords", "learn", "integrate", "eval", "plot", "run-all")


def build_parser():
    p = argparse.ArgumentParser(prog="epde", description="Organize scrambled data and learn emergent PDEs.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="YAML configuration (defaults are used for missing keys)")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--threads", type=int, default=None, help="cap worker threads")
    p.add_argument("--csv", action="store_true", help="plot: also write the numbers behind each figure")
    p.add_argument("--color-by", action="append", default=[], metavar="AXIS=COLUMN",
                   help="plot: colour an axis embedding by a metadata column, e.g. p=D_e")
    p.add_argument("--debug-dump", action="store_true", help="organize: dump distance matrices and trees")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def _cap_threads(n):
    # must run before numpy loads its BLAS
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("epde: --threads must be >= 1", file=sys.stderr)
            return 2
        _cap_threads(args.threads)

    from . import _accel, pipeline
    from .config import ConfigError, load_config

    try:
        cfg = load_config(args.config)
        for item in args.color_by:
            ax, _, col = item.partition("=")
            if ax not in ("p", "t", "s") or not col:
                raise ConfigError([f"--color-by {item!r}: expected AXIS=COLUMN with AXIS in p/t/s"])
            cfg["plot"]["color_by"][ax] = col
    except (ConfigError, OSError) as e:
        print(f"epde: {e}", file=sys.stderr)
        return 2
    if args.threads is not None:
        _accel.set_threads(args.threads)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr))
    opts = {"csv": args.csv, "debug_dump": args.debug_dump, "log": log}
    stages = pipeline.STAGES if args.verb == "run-all" else (args.verb,)
    for stage in stages:
        try:
            pipeline.run_stage(stage, cfg, args.out, **opts)
        except pipeline.MissingInput as e:
            print(f"epde: {e}", file=sys.stderr)
            return 2
        except pipeline.NumericalFailure as e:
            print(f"epde: numerical failure: {e}", file=sys.stderr)
            return 1
        except ValueError as e:
            print(f"epde: {e}", file=sys.stderr)
            return 2
        if log:
            log(f"{stage}: done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
