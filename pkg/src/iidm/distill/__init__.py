from .vgg import SLIM_WIDTHS, VGG_WIDTHS, Coder, compression_ratio, decoder_layout, encoder_layout, layout_param_count
from .eigenbasis import (
    EigenBasis,
    center_features,
    derive_eigenbasis,
    exact_pca_basis,
    mean_reconstruction_loss,
    orthonormality_error,
    reconstruction_loss,
    subspace_angle_deg,
)
from .spectra import cev_table, image_spectrum, mcev, mcev_curve, select_channel_lengths, spectra_from_features
from .blockwise import BlockwiseDistiller, SequencingError, encoder_target_loss, train_teacher

__all__ = [
    "BlockwiseDistiller", "Coder", "EigenBasis", "SLIM_WIDTHS", "SequencingError", "VGG_WIDTHS",
    "center_features", "cev_table", "compression_ratio", "decoder_layout", "derive_eigenbasis",
    "encoder_layout", "encoder_target_loss", "exact_pca_basis", "image_spectrum", "layout_param_count",
    "mcev", "mcev_curve", "mean_reconstruction_loss", "orthonormality_error", "reconstruction_loss",
    "select_channel_lengths", "spectra_from_features", "subspace_angle_deg", "train_teacher",
]
