"""Third-party provisioning: mint a key and the matching transformed model.

The trusted third party trains (or loads) a plain model, derives the
orthogonal matrix from a fresh seed, and writes two artifacts: the key
file for the client and the transformed model file for the provider. The
plain model file is never modified.
"""

from __future__ import annotations

from .cipher import SecretKey, generate_orthogonal, write_key
from .errors import GeometryError
from .model import read_model, transform_model, write_model


def thirdparty_provision(seed: int, patch: int, channels: int, model_path, key_out, model_out) -> SecretKey:
    """Write the OKEY key file and the encrypted CMXM model file.

    The key geometry must match the plain model's (patch, channels);
    deterministic in the seed.
    """
    key = SecretKey(seed=seed, patch=patch, channels=channels)
    model = read_model(model_path)
    if model.encrypted:
        raise ValueError("input model is already encrypted")
    if (model.patch, model.channels) != (patch, channels):
        raise GeometryError(
            f"key geometry p={patch} C={channels} does not match model "
            f"p={model.patch} C={model.channels}"
        )
    transformed = transform_model(model, generate_orthogonal(key))
    write_key(key, key_out)
    write_model(transformed, model_out)
    return key
