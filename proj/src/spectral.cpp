#include "mlip/spectral.hpp"

#include <cmath>
#include <complex>

namespace mlip {

using cplx = std::complex<double>;

static bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// iterative radix-2 Cooley-Tukey, no normalization
static void fft_radix2(std::vector<cplx>& a, bool invert) {
  int n = static_cast<int>(a.size());
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[static_cast<size_t>(i)], a[static_cast<size_t>(j)]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * M_PI / len * (invert ? 1.0 : -1.0);
    cplx wlen(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        cplx u = a[static_cast<size_t>(i + k)];
        cplx v = a[static_cast<size_t>(i + k + len / 2)] * w;
        a[static_cast<size_t>(i + k)] = u + v;
        a[static_cast<size_t>(i + k + len / 2)] = u - v;
        w *= wlen;
      }
    }
  }
}

// 2D transform of an h x w buffer: rows then columns
static void fft2(std::vector<cplx>& buf, int h, int w, bool invert) {
  std::vector<cplx> line(static_cast<size_t>(std::max(h, w)));
  for (int p = 0; p < h; ++p) {
    line.assign(buf.begin() + static_cast<size_t>(p) * w, buf.begin() + static_cast<size_t>(p + 1) * w);
    fft_radix2(line, invert);
    std::copy(line.begin(), line.end(), buf.begin() + static_cast<size_t>(p) * w);
  }
  for (int q = 0; q < w; ++q) {
    line.resize(static_cast<size_t>(h));
    for (int p = 0; p < h; ++p) line[static_cast<size_t>(p)] = buf[static_cast<size_t>(p) * w + q];
    fft_radix2(line, invert);
    for (int p = 0; p < h; ++p) buf[static_cast<size_t>(p) * w + q] = line[static_cast<size_t>(p)];
  }
}

static void check_grid(const Tensor& grid, const char* op) {
  if (grid.rank() != 3)
    throw std::invalid_argument(std::string(op) + ": expected h x w x C grid, got " + shape_str(grid.shape()));
  if (!is_pow2(grid.dim(0)) || !is_pow2(grid.dim(1)))
    throw std::invalid_argument(std::string(op) + ": grid sides must be powers of two, got " +
                                shape_str(grid.shape()));
}

Spectrum dft_2d(const Tensor& grid) {
  check_grid(grid, "dft_2d");
  int h = grid.dim(0), w = grid.dim(1), ch = grid.dim(2);
  size_t plane = static_cast<size_t>(h) * w;
  std::vector<double> re(plane * ch), im(plane * ch);
  std::vector<cplx> buf(plane);
  for (int c = 0; c < ch; ++c) {
    for (size_t i = 0; i < plane; ++i) buf[i] = cplx(grid.data()[i * ch + c], 0.0);
    fft2(buf, h, w, false);
    for (size_t i = 0; i < plane; ++i) {
      re[i * ch + c] = buf[i].real();
      im[i * ch + c] = buf[i].imag();
    }
  }
  Shape shape{h, w, ch};
  // adjoint of a linear map with kernel e^{-2 pi i theta} is the unnormalized
  // inverse transform of the upstream gradient
  Tensor re_t = make_op(shape, std::move(re), {grid.node()}, [pg = grid.node(), h, w, ch](TensorNode& self) {
    if (!pg->requires_grad) return;
    ensure_grad(*pg);
    size_t plane2 = static_cast<size_t>(h) * w;
    std::vector<cplx> b(plane2);
    for (int c = 0; c < ch; ++c) {
      for (size_t i = 0; i < plane2; ++i) b[i] = cplx(self.grad[i * ch + c], 0.0);
      fft2(b, h, w, true);
      for (size_t i = 0; i < plane2; ++i) pg->grad[i * ch + c] += b[i].real();
    }
  });
  Tensor im_t = make_op(shape, std::move(im), {grid.node()}, [pg = grid.node(), h, w, ch](TensorNode& self) {
    if (!pg->requires_grad) return;
    ensure_grad(*pg);
    size_t plane2 = static_cast<size_t>(h) * w;
    std::vector<cplx> b(plane2);
    for (int c = 0; c < ch; ++c) {
      for (size_t i = 0; i < plane2; ++i) b[i] = cplx(self.grad[i * ch + c], 0.0);
      fft2(b, h, w, true);
      for (size_t i = 0; i < plane2; ++i) pg->grad[i * ch + c] -= b[i].imag();
    }
  });
  return Spectrum{re_t, im_t};
}

Spectrum dft_2d_naive(const Tensor& grid) {
  check_grid(grid, "dft_2d_naive");
  int h = grid.dim(0), w = grid.dim(1), ch = grid.dim(2);
  if (h > 16 || w > 16)
    throw std::invalid_argument("dft_2d_naive: grid larger than 16x16 (oracle only)");
  std::vector<double> re(static_cast<size_t>(h) * w * ch, 0.0), im(re.size(), 0.0);
  for (int u = 0; u < h; ++u)
    for (int v = 0; v < w; ++v)
      for (int c = 0; c < ch; ++c) {
        double sr = 0.0, si = 0.0;
        for (int p = 0; p < h; ++p)
          for (int q = 0; q < w; ++q) {
            double theta = -2.0 * M_PI * (static_cast<double>(u) * p / h + static_cast<double>(v) * q / w);
            double x = grid.data()[(static_cast<size_t>(p) * w + q) * ch + c];
            sr += x * std::cos(theta);
            si += x * std::sin(theta);
          }
        re[(static_cast<size_t>(u) * w + v) * ch + c] = sr;
        im[(static_cast<size_t>(u) * w + v) * ch + c] = si;
      }
  Shape shape{h, w, ch};
  return Spectrum{Tensor::from_vec(shape, re), Tensor::from_vec(shape, im)};
}

HalfSpectrum half_spectrum(const Spectrum& s) {
  int h = s.h(), w = s.w(), ch = s.channels();
  if (w % 2 != 0) throw std::invalid_argument("half_spectrum: spectrum width must be even, got " +
                                              std::to_string(w));
  int w2 = w / 2;
  auto at = [ch, w](int u, int v, int c) { return (static_cast<size_t>(u) * w + v) * ch + c; };
  auto hat = [ch, w2](int u, int v, int c) { return (static_cast<size_t>(u) * w2 + v) * ch + c; };
  const auto& re = s.re.data();
  const auto& im = s.im.data();
  std::vector<double> hre(static_cast<size_t>(h) * w2 * ch), him(hre.size());
  for (int u = 0; u < h; ++u)
    for (int c = 0; c < ch; ++c) {
      // column 0 packs DC + i * Nyquist
      hre[hat(u, 0, c)] = re[at(u, 0, c)] - im[at(u, w2, c)];
      him[hat(u, 0, c)] = im[at(u, 0, c)] + re[at(u, w2, c)];
      for (int v = 1; v < w2; ++v) {
        hre[hat(u, v, c)] = re[at(u, v, c)];
        him[hat(u, v, c)] = im[at(u, v, c)];
      }
    }
  Shape shape{h, w2, ch};
  Tensor hre_t = make_op(shape, std::move(hre), {s.re.node(), s.im.node()},
                         [pre = s.re.node(), pim = s.im.node(), h, w, w2, ch, at, hat](TensorNode& self) {
                           for (int u = 0; u < h; ++u)
                             for (int c = 0; c < ch; ++c) {
                               double g0 = self.grad[hat(u, 0, c)];
                               if (pre->requires_grad) {
                                 ensure_grad(*pre);
                                 pre->grad[at(u, 0, c)] += g0;
                                 for (int v = 1; v < w2; ++v) pre->grad[at(u, v, c)] += self.grad[hat(u, v, c)];
                               }
                               if (pim->requires_grad) {
                                 ensure_grad(*pim);
                                 pim->grad[at(u, w2, c)] -= g0;
                               }
                             }
                           (void)w;
                         });
  Tensor him_t = make_op(shape, std::move(him), {s.re.node(), s.im.node()},
                         [pre = s.re.node(), pim = s.im.node(), h, w, w2, ch, at, hat](TensorNode& self) {
                           for (int u = 0; u < h; ++u)
                             for (int c = 0; c < ch; ++c) {
                               double g0 = self.grad[hat(u, 0, c)];
                               if (pim->requires_grad) {
                                 ensure_grad(*pim);
                                 pim->grad[at(u, 0, c)] += g0;
                                 for (int v = 1; v < w2; ++v) pim->grad[at(u, v, c)] += self.grad[hat(u, v, c)];
                               }
                               if (pre->requires_grad) {
                                 ensure_grad(*pre);
                                 pre->grad[at(u, w2, c)] += g0;
                               }
                             }
                           (void)w;
                         });
  return HalfSpectrum{hre_t, him_t};
}

// unpack a packed column-0 pair Z = A + iB into the conjugate-symmetric
// DC column A and Nyquist column B
static void unpack_col0(const std::vector<cplx>& z, std::vector<cplx>& dc, std::vector<cplx>& nyq) {
  int h = static_cast<int>(z.size());
  dc.resize(z.size());
  nyq.resize(z.size());
  for (int u = 0; u < h; ++u) {
    cplx zn = std::conj(z[static_cast<size_t>((h - u) % h)]);
    dc[static_cast<size_t>(u)] = 0.5 * (z[static_cast<size_t>(u)] + zn);
    nyq[static_cast<size_t>(u)] = (z[static_cast<size_t>(u)] - zn) / cplx(0.0, 2.0);
  }
}

// full h x w complex spectrum from packed half planes for one channel
static std::vector<cplx> extend_channel(const std::vector<double>& hre, const std::vector<double>& him,
                                        int h, int w2, int ch, int c) {
  int w = 2 * w2;
  auto hat = [ch, w2](int u, int v, int cc) { return (static_cast<size_t>(u) * w2 + v) * ch + cc; };
  std::vector<cplx> z(static_cast<size_t>(h));
  for (int u = 0; u < h; ++u) z[static_cast<size_t>(u)] = cplx(hre[hat(u, 0, c)], him[hat(u, 0, c)]);
  std::vector<cplx> dc, nyq;
  unpack_col0(z, dc, nyq);
  std::vector<cplx> full(static_cast<size_t>(h) * w);
  for (int u = 0; u < h; ++u) {
    full[static_cast<size_t>(u) * w + 0] = dc[static_cast<size_t>(u)];
    full[static_cast<size_t>(u) * w + w2] = nyq[static_cast<size_t>(u)];
    for (int v = 1; v < w2; ++v) {
      cplx val(hre[hat(u, v, c)], him[hat(u, v, c)]);
      full[static_cast<size_t>(u) * w + v] = val;
      full[static_cast<size_t>((h - u) % h) * w + (w - v)] = std::conj(val);
    }
  }
  return full;
}

Spectrum hermitian_extend(const HalfSpectrum& hs) {
  int h = hs.h(), w2 = hs.half_w(), ch = hs.channels();
  int w = 2 * w2;
  std::vector<double> re(static_cast<size_t>(h) * w * ch), im(re.size());
  for (int c = 0; c < ch; ++c) {
    auto full = extend_channel(hs.re.data(), hs.im.data(), h, w2, ch, c);
    for (size_t i = 0; i < full.size(); ++i) {
      re[i * ch + c] = full[i].real();
      im[i * ch + c] = full[i].imag();
    }
  }
  Shape shape{h, w, ch};
  return Spectrum{Tensor::from_vec(shape, re), Tensor::from_vec(shape, im)};
}

static void check_residue(double max_im, double scale, const char* op) {
  if (max_im > 1e-5 * std::max(1.0, scale))
    throw std::runtime_error(std::string(op) + ": imaginary residue " + std::to_string(max_im) +
                             " above threshold (broken extension)");
}

Tensor idft_2d_from_half(const HalfSpectrum& hs) {
  int h = hs.h(), w2 = hs.half_w(), ch = hs.channels();
  int w = 2 * w2;
  std::vector<double> out(static_cast<size_t>(h) * w * ch);
  double max_im = 0.0, max_re = 0.0;
  for (int c = 0; c < ch; ++c) {
    auto full = extend_channel(hs.re.data(), hs.im.data(), h, w2, ch, c);
    fft2(full, h, w, true);
    double norm = 1.0 / (static_cast<double>(h) * w);
    for (size_t i = 0; i < full.size(); ++i) {
      out[i * ch + c] = full[i].real() * norm;
      max_im = std::max(max_im, std::fabs(full[i].imag() * norm));
      max_re = std::max(max_re, std::fabs(full[i].real() * norm));
    }
  }
  check_residue(max_im, max_re, "idft_2d_from_half");
  return Tensor::from_vec({h, w, ch}, out);
}

Spectrum idft_2d(const Spectrum& s) {
  int h = s.h(), w = s.w(), ch = s.channels();
  size_t plane = static_cast<size_t>(h) * w;
  std::vector<double> re(plane * ch), im(plane * ch);
  std::vector<cplx> buf(plane);
  double norm = 1.0 / (static_cast<double>(h) * w);
  for (int c = 0; c < ch; ++c) {
    for (size_t i = 0; i < plane; ++i) buf[i] = cplx(s.re.data()[i * ch + c], s.im.data()[i * ch + c]);
    fft2(buf, h, w, true);
    for (size_t i = 0; i < plane; ++i) {
      re[i * ch + c] = buf[i].real() * norm;
      im[i * ch + c] = buf[i].imag() * norm;
    }
  }
  Shape shape{h, w, ch};
  return Spectrum{Tensor::from_vec(shape, re), Tensor::from_vec(shape, im)};
}

Tensor idft_2d_real(const Tensor& modulated) {
  if (modulated.rank() != 3)
    throw std::invalid_argument("idft_2d_real: expected h x w/2 x C half spectrum, got " +
                                shape_str(modulated.shape()));
  int h = modulated.dim(0), w2 = modulated.dim(1), ch = modulated.dim(2);
  int w = 2 * w2;
  if (!is_pow2(h) || !is_pow2(w))
    throw std::invalid_argument("idft_2d_real: grid sides must be powers of two");
  auto hat = [ch, w2](int u, int v, int c) { return (static_cast<size_t>(u) * w2 + v) * ch + c; };
  const auto& yv = modulated.data();
  std::vector<double> out(static_cast<size_t>(h) * w * ch);
  double max_im = 0.0, max_re = 0.0;
  std::vector<cplx> full(static_cast<size_t>(h) * w);
  double norm = 1.0 / (static_cast<double>(h) * w);
  for (int c = 0; c < ch; ++c) {
    // packed real column 0: symmetrized DC, antisymmetrized imaginary Nyquist
    for (int u = 0; u < h; ++u) {
      double zu = yv[hat(u, 0, c)];
      double zn = yv[hat((h - u) % h, 0, c)];
      full[static_cast<size_t>(u) * w + 0] = cplx(0.5 * (zu + zn), 0.0);
      full[static_cast<size_t>(u) * w + w2] = cplx(0.0, 0.5 * (zn - zu));
      for (int v = 1; v < w2; ++v) {
        full[static_cast<size_t>(u) * w + v] = cplx(yv[hat(u, v, c)], 0.0);
        full[static_cast<size_t>(u) * w + (w - v)] = cplx(yv[hat((h - u) % h, v, c)], 0.0);
      }
    }
    fft2(full, h, w, true);
    for (size_t i = 0; i < full.size(); ++i) {
      out[i * ch + c] = full[i].real() * norm;
      max_im = std::max(max_im, std::fabs(full[i].imag() * norm));
      max_re = std::max(max_re, std::fabs(full[i].real() * norm));
    }
  }
  check_residue(max_im, max_re, "idft_2d_real");
  return make_op({h, w, ch}, std::move(out), {modulated.node()},
                 [py = modulated.node(), h, w, w2, ch, hat, norm](TensorNode& self) {
                   if (!py->requires_grad) return;
                   ensure_grad(*py);
                   std::vector<cplx> g(static_cast<size_t>(h) * w);
                   for (int c = 0; c < ch; ++c) {
                     for (size_t i = 0; i < g.size(); ++i) g[i] = cplx(self.grad[i * ch + c], 0.0);
                     fft2(g, h, w, false);
                     auto gre = [&](int u, int v) { return g[static_cast<size_t>(u) * w + v].real() * norm; };
                     auto gim = [&](int u, int v) { return g[static_cast<size_t>(u) * w + v].imag() * norm; };
                     for (int u = 0; u < h; ++u) {
                       int un = (h - u) % h;
                       py->grad[hat(u, 0, c)] += 0.5 * (gre(u, 0) + gre(un, 0)) + 0.5 * (gim(un, w2) - gim(u, w2));
                       for (int v = 1; v < w2; ++v)
                         py->grad[hat(u, v, c)] += gre(u, v) + gre(un, w - v);
                     }
                   }
                 });
}

Tensor lego_filter_apply(const HalfSpectrum& hs, const LegoFilter& filter) {
  int count = filter.piece_count();
  if (count < 2) throw std::invalid_argument("lego_filter_apply: at least 2 pieces required, got " +
                                             std::to_string(count));
  for (const auto& p : filter.pieces)
    if (p.shape() != hs.re.shape())
      throw std::invalid_argument("lego_filter_apply: piece shape " + shape_str(p.shape()) +
                                  " does not match half spectrum " + shape_str(hs.re.shape()));
  int h = hs.h(), w = 2 * hs.half_w();
  Tensor power = add(mul(hs.re, hs.re), mul(hs.im, hs.im));
  Tensor mixed;
  for (int j = 0; j < count; ++j) {
    double cj = std::cos((2.0 * (j + 1) - 1.0) * M_PI / (2.0 * count));
    Tensor term = scale(filter.pieces[static_cast<size_t>(j)], cj);
    mixed = j == 0 ? term : add(mixed, term);
  }
  return scale(mul(power, mixed), 2.0 / (static_cast<double>(h) * w));
}

TokenSet fourier_block_forward(const TokenSet& ts, const FourierBlockParams& params, int h, int w) {
  if (ts.fine_class_index)
    throw std::invalid_argument("fourier_block_forward: frequency stage carries no class token");
  if (ts.count() != h * w)
    throw std::invalid_argument("fourier_block_forward: token count " + std::to_string(ts.count()) +
                                " does not match grid " + std::to_string(h) + "x" + std::to_string(w));
  int c = ts.width();
  constexpr double kLnEps = 1e-5;

  Tensor normed = layer_norm(ts.tokens, params.ln1_gain, params.ln1_bias, kLnEps);
  Spectrum spec = dft_2d(reshape(normed, {h, w, c}));
  HalfSpectrum half = half_spectrum(spec);
  Tensor modulated = lego_filter_apply(half, params.filter);
  Tensor mixed = reshape(idft_2d_real(modulated), {h * w, c});
  Tensor x1 = add(ts.tokens, mixed);

  Tensor x1n = layer_norm(x1, params.ln2_gain, params.ln2_bias, kLnEps);
  Tensor hdn = gelu(add_rowvec(matmul(x1n, params.mlp_w1), params.mlp_b1));
  Tensor x2 = add(x1, add_rowvec(matmul(hdn, params.mlp_w2), params.mlp_b2));

  TokenSet out;
  out.tokens = x2;
  out.size_weights = ts.size_weights;
  out.fine_class_index = ts.fine_class_index;
  return out;
}

TokenSet make_token_set(Tensor tokens) {
  TokenSet ts;
  ts.size_weights.assign(static_cast<size_t>(tokens.rows()), 1.0);
  ts.tokens = std::move(tokens);
  return ts;
}

}  // namespace mlip
