#include "lilac/ops.hpp"

#include <algorithm>
#include <cmath>

namespace lilac::ops {

namespace {

template <typename Real>
using NodeT = detail::Node<Real>;

template <typename Real>
void require_same_shape(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename Real>
void require_rank(const Tensor<Real>& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

template <typename Real>
bool wants_grad(const NodeT<Real>& self, std::size_t parent) {
  return self.parents[parent]->requires_grad;
}

template <typename Real>
std::vector<Real>& grad_of(NodeT<Real>& self, std::size_t parent) {
  return self.parents[parent]->grad;
}

}  // namespace

std::size_t default_groups(std::size_t channels) { return channels < 8 ? channels : 8; }

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {&a, &b}, [](NodeT<Real>& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants_grad(self, p)) continue;
      auto& g = grad_of(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {&a, &b}, [](NodeT<Real>& self) {
    if (wants_grad(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  const auto x = a.data();
  const auto y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor<Real>::make_result(a.shape(), std::move(out), {&a, &b}, [](NodeT<Real>& self) {
    const auto& xa = self.parents[0]->data;
    const auto& xb = self.parents[1]->data;
    if (wants_grad(self, 0)) {
      auto& g = grad_of(self, 0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xb[i];
    }
    if (wants_grad(self, 1)) {
      auto& g = grad_of(self, 1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * xa[i];
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor<Real>::make_result(a.shape(), std::move(out), {&a}, [factor](NodeT<Real>& self) {
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename Real>
Tensor<Real> scale_samples(const Tensor<Real>& x, std::span<const Real> factors) {
  const std::size_t batch = x.dim(0);
  if (factors.size() != batch) throw DimensionError("scale_samples: one factor per sample required");
  const std::size_t per = x.numel() / batch;
  std::vector<Real> out(x.numel());
  const auto in = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < per; ++i) out[b * per + i] = in[b * per + i] * factors[b];
  }
  std::vector<Real> f(factors.begin(), factors.end());
  return Tensor<Real>::make_result(x.shape(), std::move(out), {&x},
                                   [f = std::move(f), per](NodeT<Real>& self) {
                                     auto& g = grad_of(self, 0);
                                     for (std::size_t b = 0; b < f.size(); ++b) {
                                       for (std::size_t i = 0; i < per; ++i) {
                                         g[b * per + i] += self.grad[b * per + i] * f[b];
                                       }
                                     }
                                   });
}

template <typename Real>
Tensor<Real> conv1d(const Tensor<Real>& input, const Tensor<Real>& weight, const Tensor<Real>& bias,
                    std::size_t stride) {
  require_rank(weight, 3, "conv1d weight");
  const bool batched = input.rank() == 3;
  if (!batched && input.rank() != 2) {
    throw DimensionError("conv1d: input must be [C,T] or [B,C,T], got " + shape_str(input.shape()));
  }
  const std::size_t B = batched ? input.dim(0) : 1;
  const std::size_t Ci = input.dim(batched ? 1 : 0);
  const std::size_t T = input.dim(batched ? 2 : 1);
  const std::size_t Co = weight.dim(0);
  const std::size_t K = weight.dim(2);
  if (K % 2 == 0) throw ConfigError("conv1d: kernel size must be odd, got " + std::to_string(K));
  if (stride != 1 && stride != 2) throw ConfigError("conv1d: stride must be 1 or 2");
  if (weight.dim(1) != Ci) {
    throw DimensionError("conv1d: weight expects " + std::to_string(weight.dim(1)) +
                         " input channels, input has " + std::to_string(Ci));
  }
  if (bias.rank() != 1 || bias.dim(0) != Co) throw DimensionError("conv1d: bias must be [C_out]");
  if (stride == 2 && T % 2 != 0) throw DimensionError("conv1d: stride 2 needs an even length");

  const std::size_t pad = (K - 1) / 2;
  const std::size_t To = stride == 1 ? T : T / 2;
  const std::size_t N = B * To;  // batch and time flattened into one GEMM axis
  const std::size_t J = Ci * K;

  // col[j = i*K + k][n = b*To + t] = x[b, i, t*stride + k - pad] (zero outside)
  std::vector<Real> col(J * N, Real(0));
  const auto x = input.data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < Ci; ++i) {
      const Real* xr = x.data() + (b * Ci + i) * T;
      for (std::size_t k = 0; k < K; ++k) {
        Real* cr = col.data() + (i * K + k) * N + b * To;
        for (std::size_t t = 0; t < To; ++t) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) -
                                     static_cast<std::ptrdiff_t>(pad);
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(T)) cr[t] = xr[src];
        }
      }
    }
  }

  const auto w = weight.data();
  const auto bs = bias.data();
  std::vector<Real> gemm(Co * N);
  for (std::size_t o = 0; o < Co; ++o) {
    Real* yr = gemm.data() + o * N;
    std::fill(yr, yr + N, bs[o]);
    for (std::size_t j = 0; j < J; ++j) {
      const Real wv = w[o * J + j];
      const Real* cr = col.data() + j * N;
      for (std::size_t n = 0; n < N; ++n) yr[n] += wv * cr[n];
    }
  }

  std::vector<Real> out(B * Co * To);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < Co; ++o) {
      std::copy_n(gemm.data() + o * N + b * To, To, out.data() + (b * Co + o) * To);
    }
  }
  Shape shape = batched ? Shape{B, Co, To} : Shape{Co, To};

  auto backward_fn = [col = std::move(col), B, Ci, T, Co, K, To, N, J, pad,
                      stride](NodeT<Real>& self) {
    // dY in GEMM layout
    std::vector<Real> dy(Co * N);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t o = 0; o < Co; ++o) {
        std::copy_n(self.grad.data() + (b * Co + o) * To, To, dy.data() + o * N + b * To);
      }
    }
    if (wants_grad(self, 2)) {
      auto& gb = grad_of(self, 2);
      for (std::size_t o = 0; o < Co; ++o) {
        Real acc = 0;
        for (std::size_t n = 0; n < N; ++n) acc += dy[o * N + n];
        gb[o] += acc;
      }
    }
    if (wants_grad(self, 1)) {
      auto& gw = grad_of(self, 1);
      for (std::size_t o = 0; o < Co; ++o) {
        const Real* dr = dy.data() + o * N;
        for (std::size_t j = 0; j < J; ++j) {
          const Real* cr = col.data() + j * N;
          Real acc = 0;
          for (std::size_t n = 0; n < N; ++n) acc += dr[n] * cr[n];
          gw[o * J + j] += acc;
        }
      }
    }
    if (wants_grad(self, 0)) {
      const auto& w = self.parents[1]->data;
      std::vector<Real> dcol(J * N, Real(0));
      for (std::size_t o = 0; o < Co; ++o) {
        const Real* dr = dy.data() + o * N;
        for (std::size_t j = 0; j < J; ++j) {
          const Real wv = w[o * J + j];
          Real* cr = dcol.data() + j * N;
          for (std::size_t n = 0; n < N; ++n) cr[n] += wv * dr[n];
        }
      }
      auto& gx = grad_of(self, 0);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t i = 0; i < Ci; ++i) {
          Real* gr = gx.data() + (b * Ci + i) * T;
          for (std::size_t k = 0; k < K; ++k) {
            const Real* cr = dcol.data() + (i * K + k) * N + b * To;
            for (std::size_t t = 0; t < To; ++t) {
              const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + k) -
                                         static_cast<std::ptrdiff_t>(pad);
              if (src >= 0 && src < static_cast<std::ptrdiff_t>(T)) gr[src] += cr[t];
            }
          }
        }
      }
    }
  };
  return Tensor<Real>::make_result(std::move(shape), std::move(out), {&input, &weight, &bias},
                                   std::move(backward_fn));
}

template <typename Real>
Tensor<Real> group_norm(const Tensor<Real>& x, std::size_t groups, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, Real eps) {
  require_rank(x, 3, "group_norm");
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (groups == 0 || C % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(C) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  if (gamma.numel() != C || beta.numel() != C) throw DimensionError("group_norm: affine must be [C]");
  const std::size_t cpg = C / groups;
  const std::size_t span = cpg * T;
  const auto in = x.data();
  const auto g = gamma.data();
  const auto bt = beta.data();
  std::vector<Real> out(x.numel());
  std::vector<Real> xhat(x.numel());
  std::vector<Real> rstd(B * groups);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t gr = 0; gr < groups; ++gr) {
      const std::size_t base = (b * C + gr * cpg) * T;
      Real m = 0;
      for (std::size_t i = 0; i < span; ++i) m += in[base + i];
      m /= static_cast<Real>(span);
      Real v = 0;
      for (std::size_t i = 0; i < span; ++i) v += (in[base + i] - m) * (in[base + i] - m);
      v /= static_cast<Real>(span);
      const Real r = Real(1) / std::sqrt(v + eps);
      rstd[b * groups + gr] = r;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = gr * cpg + c;
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t idx = base + c * T + t;
          xhat[idx] = (in[idx] - m) * r;
          out[idx] = xhat[idx] * g[ch] + bt[ch];
        }
      }
    }
  }
  auto backward_fn = [xhat = std::move(xhat), rstd = std::move(rstd), B, C, T, groups, cpg,
                      span](NodeT<Real>& self) {
    const auto& gam = self.parents[1]->data;
    if (wants_grad(self, 1) || wants_grad(self, 2)) {
      std::vector<Real> dg(C, Real(0)), db(C, Real(0));
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t t = 0; t < T; ++t) {
            const std::size_t idx = (b * C + c) * T + t;
            dg[c] += self.grad[idx] * xhat[idx];
            db[c] += self.grad[idx];
          }
        }
      }
      if (wants_grad(self, 1)) {
        auto& gg = grad_of(self, 1);
        for (std::size_t c = 0; c < C; ++c) gg[c] += dg[c];
      }
      if (wants_grad(self, 2)) {
        auto& gb = grad_of(self, 2);
        for (std::size_t c = 0; c < C; ++c) gb[c] += db[c];
      }
    }
    if (wants_grad(self, 0)) {
      auto& gx = grad_of(self, 0);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t gr = 0; gr < groups; ++gr) {
          const std::size_t base = (b * C + gr * cpg) * T;
          Real mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < cpg; ++c) {
            const Real gm = gam[gr * cpg + c];
            for (std::size_t t = 0; t < T; ++t) {
              const std::size_t idx = base + c * T + t;
              const Real d = self.grad[idx] * gm;
              mean_d += d;
              mean_dx += d * xhat[idx];
            }
          }
          mean_d /= static_cast<Real>(span);
          mean_dx /= static_cast<Real>(span);
          const Real r = rstd[b * groups + gr];
          for (std::size_t c = 0; c < cpg; ++c) {
            const Real gm = gam[gr * cpg + c];
            for (std::size_t t = 0; t < T; ++t) {
              const std::size_t idx = base + c * T + t;
              const Real d = self.grad[idx] * gm;
              gx[idx] += r * (d - mean_d - xhat[idx] * mean_dx);
            }
          }
        }
      }
    }
  };
  return Tensor<Real>::make_result(x.shape(), std::move(out), {&x, &gamma, &beta},
                                   std::move(backward_fn));
}

template <typename Real>
Tensor<Real> silu(const Tensor<Real>& x) {
  const auto in = x.data();
  std::vector<Real> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real s = Real(1) / (Real(1) + std::exp(-in[i]));
    out[i] = in[i] * s;
  }
  return Tensor<Real>::make_result(x.shape(), std::move(out), {&x}, [](NodeT<Real>& self) {
    const auto& in = self.parents[0]->data;
    auto& g = grad_of(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real s = Real(1) / (Real(1) + std::exp(-in[i]));
      g[i] += self.grad[i] * (s + in[i] * s * (Real(1) - s));
    }
  });
}

template <typename Real>
Tensor<Real> scale_shift(const Tensor<Real>& x, const Tensor<Real>& modulation) {
  require_rank(x, 3, "scale_shift");
  require_rank(modulation, 2, "scale_shift modulation");
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (modulation.dim(0) != B || modulation.dim(1) != 2 * C) {
    throw DimensionError("scale_shift: modulation must be [B, 2C]");
  }
  const auto in = x.data();
  const auto m = modulation.data();
  std::vector<Real> out(x.numel());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const Real s = Real(1) + m[b * 2 * C + c];
      const Real sh = m[b * 2 * C + C + c];
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t idx = (b * C + c) * T + t;
        out[idx] = in[idx] * s + sh;
      }
    }
  }
  return Tensor<Real>::make_result(x.shape(), std::move(out), {&x, &modulation},
                                   [B, C, T](NodeT<Real>& self) {
                                     const auto& in = self.parents[0]->data;
                                     const auto& m = self.parents[1]->data;
                                     const bool gx = wants_grad(self, 0);
                                     const bool gm = wants_grad(self, 1);
                                     for (std::size_t b = 0; b < B; ++b) {
                                       for (std::size_t c = 0; c < C; ++c) {
                                         const Real s = Real(1) + m[b * 2 * C + c];
                                         Real ds = 0, dsh = 0;
                                         for (std::size_t t = 0; t < T; ++t) {
                                           const std::size_t idx = (b * C + c) * T + t;
                                           const Real d = self.grad[idx];
                                           if (gx) grad_of(self, 0)[idx] += d * s;
                                           ds += d * in[idx];
                                           dsh += d;
                                         }
                                         if (gm) {
                                           grad_of(self, 1)[b * 2 * C + c] += ds;
                                           grad_of(self, 1)[b * 2 * C + C + c] += dsh;
                                         }
                                       }
                                     }
                                   });
}

template <typename Real>
Tensor<Real> linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const std::size_t B = x.dim(0), In = x.dim(1), Out = weight.dim(0);
  if (weight.dim(1) != In || bias.numel() != Out) throw DimensionError("linear: shape mismatch");
  const auto in = x.data();
  const auto w = weight.data();
  const auto bs = bias.data();
  std::vector<Real> out(B * Out);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < Out; ++o) {
      Real acc = bs[o];
      for (std::size_t i = 0; i < In; ++i) acc += w[o * In + i] * in[b * In + i];
      out[b * Out + o] = acc;
    }
  }
  return Tensor<Real>::make_result(
      Shape{B, Out}, std::move(out), {&x, &weight, &bias}, [B, In, Out](NodeT<Real>& self) {
        const auto& in = self.parents[0]->data;
        const auto& w = self.parents[1]->data;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t o = 0; o < Out; ++o) {
            const Real d = self.grad[b * Out + o];
            if (wants_grad(self, 0)) {
              auto& gx = grad_of(self, 0);
              for (std::size_t i = 0; i < In; ++i) gx[b * In + i] += d * w[o * In + i];
            }
            if (wants_grad(self, 1)) {
              auto& gw = grad_of(self, 1);
              for (std::size_t i = 0; i < In; ++i) gw[o * In + i] += d * in[b * In + i];
            }
            if (wants_grad(self, 2)) grad_of(self, 2)[o] += d;
          }
        }
      });
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b) {
  require_rank(a, 3, "concat_channels");
  require_rank(b, 3, "concat_channels");
  const std::size_t B = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), T = a.dim(2);
  if (b.dim(0) != B || b.dim(2) != T) throw DimensionError("concat_channels: batch/time mismatch");
  std::vector<Real> out(B * (Ca + Cb) * T);
  for (std::size_t s = 0; s < B; ++s) {
    std::copy_n(a.data().data() + s * Ca * T, Ca * T, out.data() + s * (Ca + Cb) * T);
    std::copy_n(b.data().data() + s * Cb * T, Cb * T, out.data() + s * (Ca + Cb) * T + Ca * T);
  }
  return Tensor<Real>::make_result(Shape{B, Ca + Cb, T}, std::move(out), {&a, &b},
                                   [B, Ca, Cb, T](NodeT<Real>& self) {
                                     for (std::size_t s = 0; s < B; ++s) {
                                       const Real* g = self.grad.data() + s * (Ca + Cb) * T;
                                       if (wants_grad(self, 0)) {
                                         auto& ga = grad_of(self, 0);
                                         for (std::size_t i = 0; i < Ca * T; ++i) ga[s * Ca * T + i] += g[i];
                                       }
                                       if (wants_grad(self, 1)) {
                                         auto& gb = grad_of(self, 1);
                                         for (std::size_t i = 0; i < Cb * T; ++i) {
                                           gb[s * Cb * T + i] += g[Ca * T + i];
                                         }
                                       }
                                     }
                                   });
}

template <typename Real>
Tensor<Real> embedding(const Tensor<Real>& table, std::span<const std::size_t> indices) {
  require_rank(table, 2, "embedding");
  const std::size_t N = table.dim(0), D = table.dim(1), B = indices.size();
  std::vector<Real> out(B * D);
  for (std::size_t b = 0; b < B; ++b) {
    if (indices[b] >= N) throw ContractError("embedding: index out of range");
    std::copy_n(table.data().data() + indices[b] * D, D, out.data() + b * D);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return Tensor<Real>::make_result(Shape{B, D}, std::move(out), {&table},
                                   [idx = std::move(idx), D](NodeT<Real>& self) {
                                     auto& g = grad_of(self, 0);
                                     for (std::size_t b = 0; b < idx.size(); ++b) {
                                       for (std::size_t d = 0; d < D; ++d) {
                                         g[idx[b] * D + d] += self.grad[b * D + d];
                                       }
                                     }
                                   });
}

template <typename Real>
Tensor<Real> replace_samples(const Tensor<Real>& x, const std::vector<bool>& keep,
                             const Tensor<Real>& fill) {
  require_rank(x, 3, "replace_samples");
  const std::size_t B = x.dim(0), C = x.dim(1), T = x.dim(2);
  if (keep.size() != B) throw DimensionError("replace_samples: one flag per sample required");
  if (fill.numel() != C) throw DimensionError("replace_samples: fill must be [C]");
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (std::size_t b = 0; b < B; ++b) {
    if (keep[b]) continue;
    for (std::size_t c = 0; c < C; ++c) {
      std::fill_n(out.data() + (b * C + c) * T, T, fill.data()[c]);
    }
  }
  return Tensor<Real>::make_result(x.shape(), std::move(out), {&x, &fill},
                                   [keep, C, T](NodeT<Real>& self) {
                                     for (std::size_t b = 0; b < keep.size(); ++b) {
                                       for (std::size_t c = 0; c < C; ++c) {
                                         const Real* g = self.grad.data() + (b * C + c) * T;
                                         if (keep[b]) {
                                           if (!wants_grad(self, 0)) continue;
                                           auto& gx = grad_of(self, 0);
                                           for (std::size_t t = 0; t < T; ++t) gx[(b * C + c) * T + t] += g[t];
                                         } else if (wants_grad(self, 1)) {
                                           Real acc = 0;
                                           for (std::size_t t = 0; t < T; ++t) acc += g[t];
                                           grad_of(self, 1)[c] += acc;
                                         }
                                       }
                                     }
                                   });
}

template <typename Real>
Tensor<Real> upsample2(const Tensor<Real>& x) {
  require_rank(x, 3, "upsample2");
  const std::size_t rows = x.dim(0) * x.dim(1), T = x.dim(2);
  std::vector<Real> out(rows * 2 * T);
  const auto in = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < T; ++t) {
      out[r * 2 * T + 2 * t] = in[r * T + t];
      out[r * 2 * T + 2 * t + 1] = in[r * T + t];
    }
  }
  return Tensor<Real>::make_result(Shape{x.dim(0), x.dim(1), 2 * T}, std::move(out), {&x},
                                   [rows, T](NodeT<Real>& self) {
                                     auto& g = grad_of(self, 0);
                                     for (std::size_t r = 0; r < rows; ++r) {
                                       for (std::size_t t = 0; t < T; ++t) {
                                         g[r * T + t] += self.grad[r * 2 * T + 2 * t] +
                                                         self.grad[r * 2 * T + 2 * t + 1];
                                       }
                                     }
                                   });
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  return Tensor<Real>::make_result(Shape{1}, {acc}, {&x}, [](NodeT<Real>& self) {
    auto& g = grad_of(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  const Real n = static_cast<Real>(x.numel());
  return Tensor<Real>::make_result(Shape{1}, {acc / n}, {&x}, [n](NodeT<Real>& self) {
    auto& g = grad_of(self, 0);
    for (auto& v : g) v += self.grad[0] / n;
  });
}

template <typename Real>
Tensor<Real> weighted_mse(const Tensor<Real>& pred, const Tensor<Real>& target,
                          std::span<const Real> weights) {
  require_same_shape(pred, target, "weighted_mse");
  const std::size_t B = pred.dim(0);
  if (weights.size() != B) throw DimensionError("weighted_mse: one weight per sample required");
  const std::size_t per = pred.numel() / B;
  const auto p = pred.data();
  const auto q = target.data();
  Real total = 0;
  for (std::size_t b = 0; b < B; ++b) {
    Real acc = 0;
    for (std::size_t i = 0; i < per; ++i) {
      const Real d = p[b * per + i] - q[b * per + i];
      acc += d * d;
    }
    total += weights[b] * acc / static_cast<Real>(per);
  }
  total /= static_cast<Real>(B);
  std::vector<Real> w(weights.begin(), weights.end());
  return Tensor<Real>::make_result(
      Shape{1}, {total}, {&pred, &target}, [w = std::move(w), per](NodeT<Real>& self) {
        const auto& p = self.parents[0]->data;
        const auto& q = self.parents[1]->data;
        const Real norm = Real(2) / static_cast<Real>(per * w.size());
        for (std::size_t b = 0; b < w.size(); ++b) {
          const Real f = self.grad[0] * w[b] * norm;
          for (std::size_t i = 0; i < per; ++i) {
            const Real d = f * (p[b * per + i] - q[b * per + i]);
            if (wants_grad(self, 0)) grad_of(self, 0)[b * per + i] += d;
            if (wants_grad(self, 1)) grad_of(self, 1)[b * per + i] -= d;
          }
        }
      });
}

#define LILAC_INSTANTIATE_OPS(R)                                                                  \
  template Tensor<R> add(const Tensor<R>&, const Tensor<R>&);                                     \
  template Tensor<R> sub(const Tensor<R>&, const Tensor<R>&);                                     \
  template Tensor<R> mul(const Tensor<R>&, const Tensor<R>&);                                     \
  template Tensor<R> scale(const Tensor<R>&, R);                                                  \
  template Tensor<R> scale_samples(const Tensor<R>&, std::span<const R>);                         \
  template Tensor<R> conv1d(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&, std::size_t);   \
  template Tensor<R> group_norm(const Tensor<R>&, std::size_t, const Tensor<R>&, const Tensor<R>&, \
                                R);                                                               \
  template Tensor<R> silu(const Tensor<R>&);                                                      \
  template Tensor<R> scale_shift(const Tensor<R>&, const Tensor<R>&);                             \
  template Tensor<R> linear(const Tensor<R>&, const Tensor<R>&, const Tensor<R>&);                \
  template Tensor<R> concat_channels(const Tensor<R>&, const Tensor<R>&);                         \
  template Tensor<R> embedding(const Tensor<R>&, std::span<const std::size_t>);                   \
  template Tensor<R> replace_samples(const Tensor<R>&, const std::vector<bool>&, const Tensor<R>&); \
  template Tensor<R> upsample2(const Tensor<R>&);                                                 \
  template Tensor<R> sum(const Tensor<R>&);                                                       \
  template Tensor<R> mean(const Tensor<R>&);                                                      \
  template Tensor<R> weighted_mse(const Tensor<R>&, const Tensor<R>&, std::span<const R>);

LILAC_INSTANTIATE_OPS(float)
LILAC_INSTANTIATE_OPS(double)

#undef LILAC_INSTANTIATE_OPS

}  // namespace lilac::ops
