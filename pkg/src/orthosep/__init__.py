"""Single-channel two-source separation with orthonormality-regularized
time-frequency embeddings."""

from .signal import StftConfig, Spectrogram, Waveform, apply_mask, istft, log_magnitude, stft  # noqa: F401
from .embedding import combined_loss, dc_loss, loss_gradient, normalize_rows, penalty  # noqa: F401

__version__ = "0.1.0"
