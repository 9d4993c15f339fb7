"""synth: синтетический куб (смесь эндмемберов) в формате .hdr + .raw."""

from __future__ import annotations

import argparse
import logging

from handlers.common import EXIT_OK, new_manifest, positive_int
from services.hsi_data import SynthSpec, cube_paths, save_cube, synth_cube

logger = logging.getLogger("hsisr")


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("synth", help="generate a synthetic hyperspectral cube")
    p.add_argument("--width", type=positive_int, default=64)
    p.add_argument("--height", type=positive_int, default=64)
    p.add_argument("--bands", type=positive_int, default=16)
    p.add_argument("--endmembers", type=int, default=4)
    p.add_argument("--smoothness", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path without extension")
    p.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    spec = SynthSpec(
        height=args.height, width=args.width, bands=args.bands,
        n_endmembers=args.endmembers, smoothness=args.smoothness, seed=args.seed,
    )
    cube = synth_cube(spec)
    save_cube(cube, args.out)

    hdr, raw = cube_paths(args.out)
    manifest = new_manifest(args)
    manifest.seeds = {"synth": args.seed}
    manifest.add(hdr, raw)
    manifest.write(hdr.with_name(hdr.stem + ".manifest.cfg"))

    logger.info("synth: %sx%sx%s cube -> %s", cube.height, cube.width, cube.bands, raw)
    return EXIT_OK
