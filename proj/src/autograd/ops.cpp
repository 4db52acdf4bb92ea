#include "plasbench/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "plasbench/errors.hpp"

namespace plasbench {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " +
                         shape_string(b));
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t positions() const { return oh * ow; }
};

// cols is [C·kh·kw × N·OH·OW], column index n·P + oy·OW + ox.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.positions();
  const std::size_t NP = g.n * P;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = cols + ((ci * g.kh + ki) * g.kw + kj) * NP;
        for (std::size_t ni = 0; ni < g.n; ++ni) {
          const T* plane = x + (ni * g.c + ci) * g.h * g.w;
          T* out = row + ni * P;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                  ix < static_cast<std::ptrdiff_t>(g.w);
              out[oy * g.ow + ox] = inside ? plane[iy * static_cast<std::ptrdiff_t>(g.w) + ix] : T{0};
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t P = g.positions();
  const std::size_t NP = g.n * P;
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = cols + ((ci * g.kh + ki) * g.kw + kj) * NP;
        for (std::size_t ni = 0; ni < g.n; ++ni) {
          T* plane = dx + (ni * g.c + ci) * g.h * g.w;
          const T* in = row + ni * P;
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                        static_cast<std::ptrdiff_t>(g.pad);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
              plane[iy * static_cast<std::ptrdiff_t>(g.w) + ix] += in[oy * g.ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const Shape& sa = tape.shape(a);
  const Shape& sb = tape.shape(b);
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(sa) + " and " + shape_string(sb));
  }
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor<T> out(Shape{m, n});
  {
    ConstMapMat<T> A(tape.value(a).raw(), m, k);
    ConstMapMat<T> B(tape.value(b).raw(), k, n);
    MapMat<T> C(out.raw(), m, n);
    C.noalias() = A * B;
  }
  return tape.record(std::move(out), {a.id, b.id}, [a, b, m, k, n](Tape<T>& t, std::span<const T> g) {
    ConstMapMat<T> G(g.data(), m, n);
    if (auto da = t.input_adjoint(a); !da.empty()) {
      ConstMapMat<T> B(t.value(b).raw(), k, n);
      MapMat<T>(da.data(), m, k).noalias() += G * B.transpose();
    }
    if (auto db = t.input_adjoint(b); !db.empty()) {
      ConstMapMat<T> A(t.value(a).raw(), m, k);
      MapMat<T>(db.data(), k, n).noalias() += A.transpose() * G;
    }
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  require_same(tape.shape(a), tape.shape(b), "add");
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
  return tape.record(std::move(out), {a.id, b.id}, [a, b](Tape<T>& t, std::span<const T> g) {
    for (Var v : {a, b}) {
      if (auto d = t.input_adjoint(v); !d.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
      }
    }
  });
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require_same(tape.shape(a), tape.shape(b), "mul");
  const auto& va = tape.value(a);
  const auto& vb = tape.value(b);
  Tensor<T> out(va.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
  return tape.record(std::move(out), {a.id, b.id}, [a, b](Tape<T>& t, std::span<const T> g) {
    if (auto da = t.input_adjoint(a); !da.empty()) {
      const auto& vb = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * vb[i];
    }
    if (auto db = t.input_adjoint(b); !db.empty()) {
      const auto& va = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * va[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  const auto& vx = tape.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = vx[i] * factor;
  return tape.record(std::move(out), {x.id}, [x, factor](Tape<T>& t, std::span<const T> g) {
    auto d = t.input_adjoint(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor;
  });
}

template <typename T>
Var add_row_bias(Tape<T>& tape, Var x, Var bias) {
  const Shape& sx = tape.shape(x);
  const Shape& sb = tape.shape(bias);
  if (sx.size() != 2 || sb.size() != 1 || sb[0] != sx[1]) {
    throw DimensionError("add_row_bias: shapes " + shape_string(sx) + " and " + shape_string(sb));
  }
  const std::size_t rows = sx[0], cols = sx[1];
  const auto& vx = tape.value(x);
  const auto& vb = tape.value(bias);
  Tensor<T> out(sx);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = vx[r * cols + c] + vb[c];
  }
  return tape.record(std::move(out), {x.id, bias.id}, [x, bias, rows, cols](Tape<T>& t, std::span<const T> g) {
    if (auto dx = t.input_adjoint(x); !dx.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (auto db = t.input_adjoint(bias); !db.empty()) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) db[c] += g[r * cols + c];
      }
    }
  });
}

template <typename T>
Var add_channel_bias(Tape<T>& tape, Var x, Var bias) {
  const Shape& sx = tape.shape(x);
  const Shape& sb = tape.shape(bias);
  require_rank(sx, 4, "add_channel_bias");
  if (sb.size() != 1 || sb[0] != sx[1]) {
    throw DimensionError("add_channel_bias: shapes " + shape_string(sx) + " and " + shape_string(sb));
  }
  const std::size_t n = sx[0], c = sx[1], plane = sx[2] * sx[3];
  const auto& vx = tape.value(x);
  const auto& vb = tape.value(bias);
  Tensor<T> out(sx);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * plane;
      for (std::size_t p = 0; p < plane; ++p) out[base + p] = vx[base + p] + vb[ch];
    }
  }
  return tape.record(std::move(out), {x.id, bias.id}, [x, bias, n, c, plane](Tape<T>& t, std::span<const T> g) {
    if (auto dx = t.input_adjoint(x); !dx.empty()) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    }
    if (auto db = t.input_adjoint(bias); !db.empty()) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const std::size_t base = (i * c + ch) * plane;
          T acc{0};
          for (std::size_t p = 0; p < plane; ++p) acc += g[base + p];
          db[ch] += acc;
        }
      }
    }
  });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var w, std::size_t stride, std::size_t pad) {
  const Shape& sx = tape.shape(x);
  const Shape& sw = tape.shape(w);
  require_rank(sx, 4, "conv2d input");
  require_rank(sw, 4, "conv2d weight");
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (sw[1] != sx[1]) {
    throw DimensionError("conv2d: input " + shape_string(sx) + " has " + std::to_string(sx[1]) +
                         " channels but weight " + shape_string(sw) + " expects " + std::to_string(sw[1]));
  }
  ConvGeometry g{sx[0], sx[1], sx[2], sx[3], sw[0], sw[2], sw[3], stride, pad, 0, 0};
  if (g.kh > g.h + 2 * pad || g.kw > g.w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_string(sw) + " larger than padded input " +
                         shape_string(sx) + " with pad " + std::to_string(pad));
  }
  g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
  g.ow = (g.w + 2 * pad - g.kw) / stride + 1;

  const std::size_t P = g.positions();
  const std::size_t NP = g.n * P;
  const std::size_t K = g.patch();

  std::vector<T> cols(K * NP);
  im2col(tape.value(x).raw(), g, cols.data());

  RowMat<T> y(g.f, NP);
  {
    ConstMapMat<T> W(tape.value(w).raw(), g.f, K);
    ConstMapMat<T> C(cols.data(), K, NP);
    y.noalias() = W * C;
  }
  Tensor<T> out(Shape{g.n, g.f, g.oh, g.ow});
  for (std::size_t ni = 0; ni < g.n; ++ni) {
    for (std::size_t fi = 0; fi < g.f; ++fi) {
      std::copy_n(y.data() + fi * NP + ni * P, P, out.raw() + (ni * g.f + fi) * P);
    }
  }

  const bool keep_cols = tape.needs_grad(w);
  if (!keep_cols) cols = {};
  return tape.record(std::move(out), {x.id, w.id},
                     [x, w, g, cols = std::move(cols)](Tape<T>& t, std::span<const T> grad) {
                       const std::size_t P = g.positions();
                       const std::size_t NP = g.n * P;
                       const std::size_t K = g.patch();
                       RowMat<T> gm(g.f, NP);
                       for (std::size_t ni = 0; ni < g.n; ++ni) {
                         for (std::size_t fi = 0; fi < g.f; ++fi) {
                           std::copy_n(grad.data() + (ni * g.f + fi) * P, P, gm.data() + fi * NP + ni * P);
                         }
                       }
                       if (auto dw = t.input_adjoint(w); !dw.empty()) {
                         ConstMapMat<T> C(cols.data(), K, NP);
                         MapMat<T>(dw.data(), g.f, K).noalias() += gm * C.transpose();
                       }
                       if (auto dx = t.input_adjoint(x); !dx.empty()) {
                         ConstMapMat<T> W(t.value(w).raw(), g.f, K);
                         RowMat<T> dcols(K, NP);
                         dcols.noalias() = W.transpose() * gm;
                         col2im_add(dcols.data(), g, dx.data());
                       }
                     });
}

template <typename T>
Var batch_norm(Tape<T>& tape, Var x, Var scale_v, Var shift_v, BatchNormStats<T>& stats, Mode mode,
               const BatchNormOptions& options) {
  const Shape& sx = tape.shape(x);
  require_rank(sx, 4, "batch_norm");
  const std::size_t n = sx[0], c = sx[1], plane = sx[2] * sx[3];
  const std::size_t m = n * plane;
  if (tape.shape(scale_v) != Shape{c} || tape.shape(shift_v) != Shape{c}) {
    throw DimensionError("batch_norm: scale/shift must be [" + std::to_string(c) + "], got " +
                         shape_string(tape.shape(scale_v)) + " and " + shape_string(tape.shape(shift_v)));
  }
  if (stats.running_mean.numel() != c || stats.running_var.numel() != c) {
    throw DimensionError("batch_norm: running stats do not match " + std::to_string(c) + " channels");
  }
  if (m == 0) throw DimensionError("batch_norm: empty input " + shape_string(sx));
  if (options.eps < 0) throw ConfigError("batch_norm: eps must be positive");
  if (mode == Mode::train && m == 1 && options.eps == 0) {
    throw NumericError("batch_norm: degenerate variance (one value per channel and eps == 0)");
  }

  const auto& vx = tape.value(x);
  const auto& gamma = tape.value(scale_v);
  const auto& beta = tape.value(shift_v);
  const T eps = static_cast<T>(options.eps);

  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::train) {
    const T mom = static_cast<T>(options.momentum);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = vx.raw() + (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) s += p[k];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* p = vx.raw() + (i * c + ch) * plane;
        for (std::size_t k = 0; k < plane; ++k) {
          const double d = p[k] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(m);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
      const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
      stats.running_mean[ch] = (T{1} - mom) * stats.running_mean[ch] + mom * static_cast<T>(mu);
      stats.running_var[ch] = (T{1} - mom) * stats.running_var[ch] + mom * static_cast<T>(unbiased);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.running_mean[ch];
      inv_std[ch] = T{1} / std::sqrt(stats.running_var[ch] + eps);
    }
  }

  Tensor<T> xhat(sx);
  Tensor<T> out(sx);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        const T h = (vx[base + k] - mean[ch]) * inv_std[ch];
        xhat[base + k] = h;
        out[base + k] = gamma[ch] * h + beta[ch];
      }
    }
  }

  const bool batch_stats = mode == Mode::train;
  return tape.record(
      std::move(out), {x.id, scale_v.id, shift_v.id},
      [x, scale_v, shift_v, n, c, plane, m, batch_stats, inv_std = std::move(inv_std), xhat = std::move(xhat)](
          Tape<T>& t, std::span<const T> g) {
        const auto& gamma = t.value(scale_v);
        auto dgamma = t.input_adjoint(scale_v);
        auto dbeta = t.input_adjoint(shift_v);
        auto dx = t.input_adjoint(x);
        for (std::size_t ch = 0; ch < c; ++ch) {
          T sum_g{0}, sum_gh{0};
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t base = (i * c + ch) * plane;
            for (std::size_t k = 0; k < plane; ++k) {
              sum_g += g[base + k];
              sum_gh += g[base + k] * xhat[base + k];
            }
          }
          if (!dgamma.empty()) dgamma[ch] += sum_gh;
          if (!dbeta.empty()) dbeta[ch] += sum_g;
          if (dx.empty()) continue;
          const T k_scale = gamma[ch] * inv_std[ch];
          if (batch_stats) {
            const T mean_g = sum_g / static_cast<T>(m);
            const T mean_gh = sum_gh / static_cast<T>(m);
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t base = (i * c + ch) * plane;
              for (std::size_t k = 0; k < plane; ++k) {
                dx[base + k] += k_scale * (g[base + k] - mean_g - xhat[base + k] * mean_gh);
              }
            }
          } else {
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t base = (i * c + ch) * plane;
              for (std::size_t k = 0; k < plane; ++k) dx[base + k] += k_scale * g[base + k];
            }
          }
        }
      });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = vx[i] > T{0} ? vx[i] : T{0};
  return tape.record(std::move(out), {x.id}, [x](Tape<T>& t, std::span<const T> g) {
    auto d = t.input_adjoint(x);
    const auto& vx = t.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (vx[i] > T{0}) d[i] += g[i];
    }
  });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const Shape& sx = tape.shape(x);
  require_rank(sx, 4, "global_avg_pool");
  const std::size_t n = sx[0], c = sx[1], plane = sx[2] * sx[3];
  if (plane == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  const auto& vx = tape.value(x);
  Tensor<T> out(Shape{n, c});
  const T inv = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < n * c; ++i) {
    T acc{0};
    for (std::size_t k = 0; k < plane; ++k) acc += vx[i * plane + k];
    out[i] = acc * inv;
  }
  return tape.record(std::move(out), {x.id}, [x, n, c, plane, inv](Tape<T>& t, std::span<const T> g) {
    auto d = t.input_adjoint(x);
    for (std::size_t i = 0; i < n * c; ++i) {
      const T gi = g[i] * inv;
      for (std::size_t k = 0; k < plane; ++k) d[i * plane + k] += gi;
    }
  });
}

template <typename T>
Var flatten(Tape<T>& tape, Var x) {
  const Shape& sx = tape.shape(x);
  if (sx.empty()) throw DimensionError("flatten: scalar input");
  const std::size_t n = sx[0];
  const std::size_t rest = n == 0 ? 0 : tape.value(x).numel() / n;
  Tensor<T> out = tape.value(x).reshaped(Shape{n, rest});
  return tape.record(std::move(out), {x.id}, [x](Tape<T>& t, std::span<const T> g) {
    auto d = t.input_adjoint(x);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var x) {
  const auto& vx = tape.value(x);
  T acc{0};
  for (auto v : vx.data()) acc += v;
  return tape.record(Tensor<T>::scalar(acc), {x.id}, [x](Tape<T>& t, std::span<const T> g) {
    auto d = t.input_adjoint(x);
    for (auto& v : d) v += g[0];
  });
}

template <typename T>
Var softmax_cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const Shape& s = tape.shape(logits);
  require_rank(s, 2, "softmax_cross_entropy");
  const std::size_t n = s[0], k = s[1];
  if (labels.size() != n) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  if (n == 0) throw DimensionError("softmax_cross_entropy: empty batch");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw LabelError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at index " +
                       std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto& z = tape.value(logits);
  std::vector<T> probs(n * k);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.raw() + i * k;
    const T mx = *std::max_element(row, row + k);
    double denom = 0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - mx));
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - mx) - log_denom));
    }
    total += log_denom - static_cast<double>(row[labels[i]] - mx);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return tape.record(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n))), {logits.id},
                     [logits, n, k, probs = std::move(probs), lab = std::move(lab)](Tape<T>& t, std::span<const T> g) {
                       auto d = t.input_adjoint(logits);
                       const T factor = g[0] / static_cast<T>(n);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < k; ++j) {
                           const T onehot = static_cast<std::size_t>(lab[i]) == j ? T{1} : T{0};
                           d[i * k + j] += factor * (probs[i * k + j] - onehot);
                         }
                       }
                     });
}

#define PLASBENCH_INSTANTIATE_OPS(T)                                                                \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                       \
  template Var add<T>(Tape<T>&, Var, Var);                                                          \
  template Var mul<T>(Tape<T>&, Var, Var);                                                          \
  template Var scale<T>(Tape<T>&, Var, T);                                                          \
  template Var add_row_bias<T>(Tape<T>&, Var, Var);                                                 \
  template Var add_channel_bias<T>(Tape<T>&, Var, Var);                                             \
  template Var conv2d<T>(Tape<T>&, Var, Var, std::size_t, std::size_t);                             \
  template Var batch_norm<T>(Tape<T>&, Var, Var, Var, BatchNormStats<T>&, Mode,                     \
                             const BatchNormOptions&);                                              \
  template Var relu<T>(Tape<T>&, Var);                                                              \
  template Var global_avg_pool<T>(Tape<T>&, Var);                                                   \
  template Var flatten<T>(Tape<T>&, Var);                                                           \
  template Var sum<T>(Tape<T>&, Var);                                                               \
  template Var softmax_cross_entropy<T>(Tape<T>&, Var, std::span<const int>);

PLASBENCH_INSTANTIATE_OPS(float)
PLASBENCH_INSTANTIATE_OPS(double)

}  // namespace plasbench
