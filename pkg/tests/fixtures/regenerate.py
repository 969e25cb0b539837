"""Regenerate bars_gan.gpri bit-for-bit.

The shared desk-scale prior used by the slow recovery tests: a default
generator/discriminator pair trained on 512 synthetic bar images.
Training takes a few minutes, which is why the checkpoint is committed
instead of built per test session.

Run from the repository root:

    python tests/fixtures/regenerate.py
"""

import os

from blindinv.data import synthetic_bars
from blindinv.gan import GanConfig, build_discriminator, build_generator, gan_train, save_checkpoint
from blindinv.rng import Pcg32

BUILD_SEED = 2024
DATA_SEED = 77
EPOCHS = 2000
BATCH = 32
LR_G = 3e-4
LR_D = 1.5e-4
N_IMAGES = 512


def main() -> None:
    rng = Pcg32(BUILD_SEED)
    cfg = GanConfig()
    gen = build_generator(cfg, rng)
    disc = build_discriminator(cfg, rng)
    data = synthetic_bars(N_IMAGES, Pcg32(DATA_SEED))
    log = gan_train(gen, disc, data, EPOCHS, BATCH, LR_G, LR_D, rng)
    out = os.path.join(os.path.dirname(__file__), "bars_gan.gpri")
    save_checkpoint(out, gen, disc)
    print(f"wrote {out}  (final d_loss={log[-1]['d_loss']:.3f}, "
          f"g_loss={log[-1]['g_loss']:.3f})")


if __name__ == "__main__":
    main()
