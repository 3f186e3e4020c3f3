import numpy as np
import pytest

from segedit.data import default_palette, synthesize_shapes, write_dataset

# The bundled desk-scale dataset: 64 train / 16 test maps at 32x32.
DATASET_SEED = 20
IMAGE_SEED = 21


@pytest.fixture(scope="session")
def synthetic_dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("shapes")
    palette = default_palette()
    rng = np.random.default_rng(DATASET_SEED)
    train = synthesize_shapes(64, 32, 32, rng, palette)
    test = synthesize_shapes(16, 32, 32, rng, palette)
    write_dataset(
        root,
        train,
        test,
        palette,
        with_images=True,
        image_rng=np.random.default_rng(IMAGE_SEED),
    )
    return root
