"""Train the full generative stack at demo scale and export image grids.

Pipeline: synthesize digits -> scattering coefficients -> PCA whitening ->
train the image decoder, then sample whitened coefficient vectors from the
three latent models (independent Gaussians, VAE, GAN) and decode each set
to a 4x4 grid.  Also exports the two-component visualization matrix.

Defaults are sized to finish in a few minutes; raise --count and the epoch
flags for better samples.

Run:  python3 demos/03_generate_digits.py --out demos/output
"""

import argparse
import os

import numpy as np

from scatgen.datasets import synthesize_digits
from scatgen.imaging import export_grid, grid_from_images
from scatgen.models import Decoder, DecoderConfig, Gan, TrainSettings, Vae, train
from scatgen.pca import fit_pca, whiten
from scatgen.pipeline import visualization_matrix
from scatgen.scattering import ScatteringConfig, build_filter_bank, flatten_coefficients, scatter
from scatgen.tensor import Tensor


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--count", type=int, default=2000, help="corpus size")
    parser.add_argument("--components", type=int, default=512)
    parser.add_argument("--decoder-epochs", type=int, default=15)
    parser.add_argument("--vae-epochs", type=int, default=31)
    parser.add_argument("--gan-epochs", type=int, default=30)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--out", default="demos/output")
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    print(f"synthesizing {args.count} digits and scattering...")
    images, _ = synthesize_digits(args.count, seed=args.seed)
    bank = build_filter_bank(ScatteringConfig(J=2, L=8))
    flat = flatten_coefficients(scatter(images, bank, chunk_size=256)).data
    model = fit_pca(flat, n_components=args.components)
    w = whiten(model, flat).values.data

    print(f"training decoder ({args.decoder_epochs} epochs)...")
    decoder = Decoder(DecoderConfig(n_components=args.components, base_spatial=7,
                                    channel_schedule=(128, 64, 32)), seed=1)
    history = train(decoder, (w, images),
                    TrainSettings(batch_size=128, epochs=args.decoder_epochs, seed=2))
    print(f"  L1 {history[0]['loss']:.4f} -> {history[-1]['loss']:.4f}")

    print(f"training VAE ({args.vae_epochs} epochs)...")
    vae = Vae(n_features=args.components, latent_width=64, beta=0.001, seed=3)
    history = train(vae, w, TrainSettings(batch_size=128, epochs=args.vae_epochs, seed=4))
    print(f"  total {history[0]['loss']:.4f} -> {history[-1]['loss']:.4f}")

    print(f"training GAN ({args.gan_epochs} epochs)...")
    gan = Gan(n_features=args.components, noise_width=64, seed=5)
    history = train(gan, w, TrainSettings(batch_size=128, epochs=args.gan_epochs, seed=6))
    print(f"  D {history[-1]['loss_d']:.3f}  G {history[-1]['loss_g']:.3f} at the end")

    rng = np.random.default_rng(7)

    def decode_grid(w_batch, name):
        decoded = np.clip(decoder(Tensor(w_batch), training=False).data, 0.0, 1.0)
        path = os.path.join(args.out, name)
        export_grid(grid_from_images(decoded, 4, 4), path)
        print(f"  wrote {path}")

    print("sampling 16 coefficient vectors per source...")
    decode_grid(w[:16], "train_reconstructions.pgm")
    decode_grid(rng.standard_normal((16, args.components)), "gaussian_samples.pgm")
    decode_grid(vae.decode(Tensor(rng.standard_normal((16, 64)))).data, "vae_samples.pgm")
    decode_grid(gan.generate(Tensor(rng.standard_normal((16, 64))), training=False).data,
                "gan_samples.pgm")

    matrix = visualization_matrix(0, 1, (-10.0, -5.0, 5.0, 10.0), decoder)
    path = os.path.join(args.out, "visualization_matrix.pgm")
    export_grid(matrix, path)
    print(f"  wrote {path}")


if __name__ == "__main__":
    main()
