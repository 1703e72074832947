"""Privacy-preserving image classification with random orthogonal matrices.

A seeded orthogonal matrix encrypts images block by block; the matching
inverse folds into the model's patch embedding, so an untrusted provider
can classify encrypted images at full plain-model accuracy without ever
seeing plaintext or key.
"""

__version__ = "0.1.0"

from .cipher import (
    OrthoMatrix,
    SecretKey,
    blockify,
    conventional_decrypt,
    conventional_encrypt,
    deblockify,
    decrypt_image,
    encrypt_image,
    generate_orthogonal,
    read_key,
    write_key,
)
from .client import RemoteError, client_infer
from .data import Dataset, gen_toy_dataset, read_dataset, toy_template, write_dataset
from .engine import (
    DivergenceError,
    ModelGeometry,
    TrainConfig,
    backward,
    forward,
    init_model,
    predict,
    train,
)
from .errors import BadMagicError, FormatError, GeometryError, TruncatedError, VersionError
from .evaluate import (
    AccuracyMatrix,
    LeakageReport,
    accuracy,
    accuracy_matrix,
    leakage_report,
    normalize_for_view,
)
from .image import ImageTensor, read_cmxe, read_ppm, write_cmxe, write_ppm
from .linalg import DegenerateError, matmul, modified_gram_schmidt, orthogonality_defect
from .model import (
    ConvMixerModel,
    MixerLayer,
    PatchEmbedding,
    deserialize_model,
    patch_embed,
    read_model,
    serialize_model,
    transform_model,
    write_model,
)
from .provision import thirdparty_provision
from .rng import SplitMix64
from .server import InferenceServer, serve
from .ssim import ssim
