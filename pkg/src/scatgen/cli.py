"""Command-line entry point.

Each subcommand runs one pipeline stage against a config assembled from
three layers: built-in defaults, the optional ``--config`` file (flat
``key = value`` lines, '#' comments), and command-line flags, which win.

    scatgen scatter --config run.cfg
    scatgen fit-pca --config run.cfg
    scatgen whiten --config run.cfg
    scatgen train-decoder --config run.cfg
    scatgen sample --config run.cfg --source vae
    scatgen report --config run.cfg --out runs/mnist
"""

from __future__ import annotations

import argparse
import sys

from .errors import ScatgenError
from .pipeline import STAGES, load_config, run_stage


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scatgen",
        description="Scattering-coefficient generative pipeline.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="flat key = value config file")
    common.add_argument("--seed", type=int, metavar="U64",
                        help="override the pipeline seed")
    common.add_argument("--out", metavar="DIR",
                        help="override the output directory")

    subparsers = parser.add_subparsers(dest="stage", required=True)
    helps = {
        "scatter": "compute scattering coefficients of the dataset",
        "fit-pca": "fit the whitening basis on scattering coefficients",
        "whiten": "project coefficients onto the whitened basis",
        "train-decoder": "train the coefficient-to-image decoder",
        "train-vae": "train the VAE over whitened coefficients",
        "train-gan": "train the GAN over whitened coefficients",
        "sample": "decode coefficients drawn from a latent source",
        "vizmatrix": "decode a two-component visualization matrix",
        "test-normality": "run per-component normality tests",
        "report": "format the normality rejection-count table",
    }
    for stage in STAGES:
        sub = subparsers.add_parser(stage, parents=[common], help=helps[stage])
        if stage == "sample":
            sub.add_argument("--source", choices=("gaussian", "vae", "gan"),
                             help="latent source to sample from")
            sub.add_argument("--count", type=int, metavar="N",
                             help="number of tiles in the grid")
        if stage == "vizmatrix":
            sub.add_argument("--c1", type=int, metavar="I",
                             help="first component index (varies down columns)")
            sub.add_argument("--c2", type=int, metavar="J",
                             help="second component index (varies across rows)")
        if stage == "test-normality":
            sub.add_argument("--samples", type=int, metavar="N",
                             help="rows used per component (0 = all)")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    mapping = {
        "seed": "seed",
        "out": "out_dir",
        "source": "sample_source",
        "count": "sample_count",
        "c1": "viz_component_1",
        "c2": "viz_component_2",
        "samples": "normality_samples",
    }
    overrides = {}
    for flag, field in mapping.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, _overrides(args))
        path = run_stage(args.stage, config)
    except ScatgenError as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    except FileNotFoundError as error:
        print(f"error: {error}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
