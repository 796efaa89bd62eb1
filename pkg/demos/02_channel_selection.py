"""Choosing slim channel widths from teacher feature spectra.

The teacher's relu1_1 .. relu4_1 features are decomposed per image; the mean
cumulative explained variance (mCEV) says how many principal directions a
student layer needs. A learned eigenbasis then maps teacher features to the
slim width, and is compared against an exact PCA.
"""
import numpy as np

from iidm.distill import (
    SLIM_WIDTHS, VGG_WIDTHS, Coder, compression_ratio, derive_eigenbasis, exact_pca_basis, mcev,
    mean_reconstruction_loss, orthonormality_error, select_channel_lengths, spectra_from_features, subspace_angle_deg,
)
from iidm.nn import inference
from iidm.numerics import Tensor
from iidm.pipeline.features import band_stats, dihedral, standardise_bands
from iidm.synthetic import gen_synthetic_scene

rng = np.random.default_rng(0)
scenes = [gen_synthetic_scene(s, 32, 32, 6) for s in range(4)]
ims = [dihedral(sc.imagery.data, k) for sc in scenes for k in range(8)]
mean, std = band_stats(ims)
x = standardise_bands(ims, mean, std)

teacher = Coder(VGG_WIDTHS, x.shape[1], rng)
with inference(teacher):
    taps = [t.data for t in teacher.encode(Tensor(x))]
feats = {n: [t[i].reshape(t.shape[1], -1) for i in range(len(t))] for n, t in enumerate(taps, 1)}

spectra = spectra_from_features(feats)
for target in (0.7, 0.85, 0.95):
    print(f"target {target:.2f}: widths {select_channel_lengths(spectra, target)}")

# the angle is only meaningful when there is a gap in the spectrum at c'
widths = select_channel_lengths(spectra, 0.85)
print("\nlayer  c'   mCEV   loss/PCA   |WW^T-I|   angle")
for n, c in zip(range(1, 5), widths):
    eb = derive_eigenbasis(feats[n], c, batch_size=8, epochs=5, seed=n)
    pca = exact_pca_basis(feats[n], c)
    ratio = mean_reconstruction_loss(eb.w, feats[n], eb.mean) / mean_reconstruction_loss(pca, feats[n], eb.mean)
    print(f"{n:5d} {c:3d}  {mcev(spectra, n, c):.3f}  {ratio:8.4f}  {orthonormality_error(eb.w):9.1e}"
          f"  {subspace_angle_deg(eb.w, pca):5.2f}")

t = Coder(VGG_WIDTHS, 4, rng).param_count()
s = Coder(SLIM_WIDTHS, 4, rng).param_count()
print(f"\ncoder parameters at {SLIM_WIDTHS}: teacher {t:,}, slim {s:,}, ratio {compression_ratio(t, s):.2f}x")
print(f"published VGG-19 vs student: {compression_ratio(78.14e6, 0.28e6):.2f}x")
