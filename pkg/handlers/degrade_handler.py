"""degrade: bicubic-даунсемплинг HR-куба и (опционально) шум с заданным SNR."""

from __future__ import annotations

import argparse
import logging
import math

from config import SUPPORTED_SCALES
from handlers.common import EXIT_OK, new_manifest, snr_arg
from services.hsi_data import add_noise_snr, bicubic_downsample, cube_paths, load_cube, normalize_radiance, save_cube

logger = logging.getLogger("hsisr")


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("degrade", help="produce an LR cube from an HR cube")
    p.add_argument("--in", dest="input", required=True, help="HR cube path (with or without extension)")
    p.add_argument("--scale", type=int, choices=SUPPORTED_SCALES, required=True)
    p.add_argument("--snr", type=snr_arg, default=math.inf, help="'inf' or SNR in dB")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true", help="rescale radiance to [0, 255] first")
    p.add_argument("--out", required=True, help="output path without extension")
    p.set_defaults(handler=handle)


def handle(args: argparse.Namespace) -> int:
    hr = load_cube(args.input)
    if args.normalize:
        hr = normalize_radiance(hr)

    lr = add_noise_snr(bicubic_downsample(hr, args.scale), args.snr, args.seed)
    save_cube(lr, args.out)

    hdr, raw = cube_paths(args.out)
    manifest = new_manifest(args)
    manifest.seeds = {"noise": args.seed}
    manifest.extra = {"scale": args.scale, "snr_db": args.snr, "source": args.input}
    manifest.add(hdr, raw)
    manifest.write(hdr.with_name(hdr.stem + ".manifest.cfg"))

    logger.info("degrade: %sx%s -> %sx%s (x%s, snr=%s dB)",
                hr.height, hr.width, lr.height, lr.width, args.scale, args.snr)
    return EXIT_OK
