#pragma once

#include <vector>

#include "mlip/tensor.hpp"
#include "mlip/token_set.hpp"

namespace mlip {

// Complex planes for an h x w x C spectrum. A spectrum of real tokens is
// conjugate symmetric: Y(u,v) = conj(Y((h-u) mod h, (w-v) mod w)).
struct Spectrum {
  Tensor re, im;  // each h x w x C
  int h() const { return re.dim(0); }
  int w() const { return re.dim(1); }
  int channels() const { return re.dim(2); }
};

// Reduced spectrum of shape h x (w/2) x C. Because the DC column (v = 0) and
// the Nyquist column (v = w/2) of a real-signal spectrum are each conjugate
// symmetric along u, they carry one real-signal's worth of information each
// and are packed into the single stored column 0 as DC + i * Nyquist.
// Columns 1 .. w/2-1 are stored as-is. This keeps the h x (w/2) footprint
// while retaining the full spectrum: see hermitian_extend for the exact
// reconstruction.
struct HalfSpectrum {
  Tensor re, im;  // each h x (w/2) x C
  int h() const { return re.dim(0); }
  int half_w() const { return re.dim(1); }
  int channels() const { return re.dim(2); }
};

// Learnable spectral filter made of piece_count real pieces, each h x (w/2) x C.
struct LegoFilter {
  std::vector<Tensor> pieces;
  int piece_count() const { return static_cast<int>(pieces.size()); }
};

// Forward 2D DFT of a real token grid (h, w powers of two), per channel,
// computed with a radix-2 FFT. Differentiable.
Spectrum dft_2d(const Tensor& grid);

// Keep the informative half of a real-signal spectrum (w even). Differentiable.
HalfSpectrum half_spectrum(const Spectrum& s);

// Exact reconstruction of the full spectrum from a packed half spectrum.
Spectrum hermitian_extend(const HalfSpectrum& h);

// Modulate the power spectrum |Y'|^2 with cosine-weighted filter pieces:
// out = (2 / hw) * |Y'|^2 (.) sum_j pieces[j] * cos((2j-1) pi / (2 count)).
// Differentiable in both the spectrum and the pieces.
Tensor lego_filter_apply(const HalfSpectrum& h, const LegoFilter& filter);

// Inverse transform of a real modulated half spectrum: unpack column 0 into
// symmetrized DC and Nyquist columns, Hermitian-extend, inverse FFT with
// 1/hw normalization, return the real part. The extension produces a valid
// real-signal spectrum by construction; the imaginary residue is checked
// (<= 1e-5) and a violation throws. Differentiable.
Tensor idft_2d_real(const Tensor& modulated);

// Inverse from a complex half spectrum (lossless round-trip path). Forward only.
Tensor idft_2d_from_half(const HalfSpectrum& h);

// Full complex inverse DFT with 1/hw normalization. Forward only.
Spectrum idft_2d(const Spectrum& s);

// Literal double-sum DFT in 64-bit, for cross-checking the FFT. Refuses grids
// larger than 16x16 so it cannot end up on a production path. Forward only.
Spectrum dft_2d_naive(const Tensor& grid);

struct FourierBlockParams {
  Tensor ln1_gain, ln1_bias;
  LegoFilter filter;
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

// Pre-norm spectral mixing block:
//   x + idft(lego(half(dft(norm(x))))) followed by a pre-norm 4x GELU MLP,
// both with residual connections. Token count and width are preserved.
// The frequency stage carries no class token.
TokenSet fourier_block_forward(const TokenSet& tokens, const FourierBlockParams& params, int h, int w);

}  // namespace mlip
