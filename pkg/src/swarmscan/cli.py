"""Command line interface: run simulations, compare variants, emit scenes.

Exit codes: 0 success, 2 configuration or scene error, 3 runtime invariant
violation.
"""

from __future__ import annotations

import argparse
import sys

from . import scenes
from .config import VARIANTS, load_config
from .errors import ConfigError, SceneFormatError, SimInvariantError
from .simulator import compare_variants, run


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmscan")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation")
    p_run.add_argument("--config", required=True, help="path to a JSON config")
    p_run.add_argument("--seed", type=int, default=None, help="override config seed")
    p_run.add_argument(
        "--variant", choices=VARIANTS, default=None, help="override config variant"
    )
    p_run.add_argument("--out", default=None, help="output directory for artifacts")

    p_cmp = sub.add_parser("compare", help="run several variant configs")
    p_cmp.add_argument("--configs", nargs="+", required=True)
    p_cmp.add_argument("--out", default=None)

    p_gen = sub.add_parser("gen-scene", help="write a benchmark scene file")
    p_gen.add_argument("--preset", choices=scenes.PRESETS, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=7)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            if args.variant is not None:
                cfg.variant = args.variant
            result = run(cfg, out_dir=args.out)
            s = result.summary
            print(
                f"{s['scene_name']} variant={s['variant']} views={s['views_used']}"
                f" cycles={s['cycles']} coverage={s['coverage']:.4f}"
                f" residual={s['residual_uncertainty']:.6g}"
                f" termination={s['termination']}"
            )
        elif args.command == "compare":
            cfgs = [load_config(p) for p in args.configs]
            rows = compare_variants(cfgs, out_dir=args.out)
            for r in rows:
                print(
                    f"{r['variant']}: coverage={r['coverage']:.4f}"
                    f" residual={r['residual_uncertainty']:.6g}"
                    f" pl={r['path_length_total']:.2f}"
                )
        elif args.command == "gen-scene":
            data = scenes.build(args.preset, seed=args.seed)
            path = scenes.write_scene(data, args.out)
            print(f"wrote {path}")
    except (ConfigError, SceneFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SimInvariantError as exc:
        print(f"simulation invariant violated: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
