"""Accuracy matrix and visual-leakage metrics.

The accuracy matrix crosses {plain, encrypted} models with {plain,
encrypted} test images; a well-formed key makes the diagonal match and
pushes the off-diagonal to chance. Leakage metrics (MSE, SSIM, per-channel
histogram correlation) quantify how much of the plaintext survives in an
encrypted image after display normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cipher import OrthoMatrix, SecretKey, encrypt_image, generate_orthogonal
from .data import Dataset
from .engine import forward_batch
from .errors import GeometryError
from .image import ENCRYPTED, PLAIN, ImageTensor
from .model import ConvMixerModel, transform_model
from .ssim import ssim

HIST_BINS = 64


@dataclass(frozen=True)
class AccuracyMatrix:
    """Percent accuracies for the four model/image combinations."""

    plain_plain: float
    plain_encrypted: float
    encrypted_plain: float
    encrypted_encrypted: float

    def table(self) -> str:
        """Tab-separated table, model rows x test-image columns."""
        return (
            "model\\test image\tplain\tencrypted\n"
            f"plain model\t{self.plain_plain:.2f}\t{self.plain_encrypted:.2f}\n"
            f"encrypted model\t{self.encrypted_plain:.2f}\t{self.encrypted_encrypted:.2f}\n"
        )

    def machine_block(self) -> str:
        """key=value lines for CI assertions."""
        return (
            f"plain_plain={self.plain_plain:.4f}\n"
            f"plain_encrypted={self.plain_encrypted:.4f}\n"
            f"encrypted_plain={self.encrypted_plain:.4f}\n"
            f"encrypted_encrypted={self.encrypted_encrypted:.4f}\n"
        )


@dataclass(frozen=True)
class LeakageReport:
    """Per-image and mean leakage metrics for one cipher."""

    mse: list[float]
    ssim: list[float]
    hist_corr: list[float]

    @property
    def mean_mse(self) -> float:
        return float(np.mean(self.mse))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim))

    @property
    def mean_hist_corr(self) -> float:
        return float(np.mean(self.hist_corr))


def accuracy(m: ConvMixerModel, data: Dataset, key: SecretKey | None = None) -> float:
    """Top-1 accuracy in percent; a key encrypts each image on the fly."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    if key is not None:
        a = generate_orthogonal(key)
        xs = np.stack([encrypt_image(im, a, key.patch).data for im in data.images])
    else:
        xs = data.stacked()
    logits, _ = forward_batch(m, xs, training=False)
    correct = (logits.argmax(axis=1) == np.asarray(data.labels)).sum()
    return 100.0 * float(correct) / len(data)


def accuracy_matrix(plain_model: ConvMixerModel, key: SecretKey, test: Dataset) -> AccuracyMatrix:
    """All four combinations of {plain, transformed} model x {plain, encrypted} images."""
    if plain_model.encrypted:
        raise ValueError("accuracy_matrix expects the untransformed model")
    if len(test) == 0:
        raise ValueError("empty dataset")
    enc_model = transform_model(plain_model, generate_orthogonal(key))
    return AccuracyMatrix(
        plain_plain=accuracy(plain_model, test),
        plain_encrypted=accuracy(plain_model, test, key),
        encrypted_plain=accuracy(enc_model, test),
        encrypted_encrypted=accuracy(enc_model, test, key),
    )


def normalize_for_view(xhat: ImageTensor) -> ImageTensor:
    """Min-max map of an encrypted image to [0,1] for display.

    Global (whole-image) normalization: per-block ranges would themselves
    leak block statistics. A constant image maps to all 0.5.
    """
    if xhat.kind != ENCRYPTED:
        raise ValueError("normalize_for_view expects an encrypted image")
    d = xhat.data
    lo, hi = float(d.min()), float(d.max())
    if hi == lo:
        return ImageTensor(np.full_like(d, 0.5), PLAIN)
    return ImageTensor((d - lo) / (hi - lo), PLAIN)


def _hist_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Mean per-channel Pearson correlation of 64-bin histograms."""
    cors = []
    for c in range(a.shape[2]):
        ha, _ = np.histogram(a[:, :, c], bins=HIST_BINS, range=(0.0, 1.0))
        hb, _ = np.histogram(b[:, :, c], bins=HIST_BINS, range=(0.0, 1.0))
        ha = ha.astype(np.float64)
        hb = hb.astype(np.float64)
        sa, sb = ha.std(), hb.std()
        if sa == 0.0 or sb == 0.0:
            cors.append(1.0 if np.array_equal(ha, hb) else 0.0)
        else:
            cors.append(float(np.corrcoef(ha, hb)[0, 1]))
    return float(np.mean(cors))


def _pair_metrics(plain: ImageTensor, enc: ImageTensor) -> tuple[float, float, float]:
    if plain.shape != enc.shape:
        raise GeometryError(f"shape mismatch: {plain.shape} vs {enc.shape}")
    view = normalize_for_view(enc).data
    mse = float(np.mean((plain.data - view) ** 2))
    return mse, ssim(plain.data, view), _hist_correlation(plain.data, view)


def leakage_report(plains, enc_proposed, enc_conventional) -> tuple[LeakageReport, LeakageReport]:
    """Leakage metrics of both ciphers against the plain originals.

    Accepts single images or equal-length sequences; returns the
    (proposed, conventional) reports.
    """
    if isinstance(plains, ImageTensor):
        plains = [plains]
        enc_proposed = [enc_proposed]
        enc_conventional = [enc_conventional]
    if not (len(plains) == len(enc_proposed) == len(enc_conventional)):
        raise ValueError("image sequences must have equal length")
    if not plains:
        raise ValueError("empty image sequence")
    rows_p = [_pair_metrics(x, e) for x, e in zip(plains, enc_proposed)]
    rows_c = [_pair_metrics(x, e) for x, e in zip(plains, enc_conventional)]

    def report(rows) -> LeakageReport:
        return LeakageReport(
            mse=[r[0] for r in rows],
            ssim=[r[1] for r in rows],
            hist_corr=[r[2] for r in rows],
        )

    return report(rows_p), report(rows_c)
