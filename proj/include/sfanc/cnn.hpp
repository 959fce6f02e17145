#pragma once

#include <cblas.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "sfanc/fft.hpp"
#include "sfanc/rng.hpp"
#include "sfanc/tensor.hpp"

namespace sfanc {

// Direction-of-arrival classifier: three conv/GroupNorm/ReLU/maxpool blocks,
// global average pooling, and two parallel softmax heads (azimuth, elevation).
// The scalar type is templated: float is the training/inference path (the
// layers are backed by BLAS sgemm), double is used by the finite-difference
// gradient checks.

struct CnnArch {
  std::size_t in_channels = 8;
  std::array<std::size_t, 3> widths = {16, 32, 64};
  std::array<std::size_t, 3> groups = {4, 8, 8};
  std::size_t n_azim = 6;
  std::size_t n_elev = 3;

  void validate() const {
    for (int i = 0; i < 3; ++i)
      if (widths[i] == 0 || groups[i] == 0 || widths[i] % groups[i] != 0)
        throw std::invalid_argument("CnnArch: group count must divide channel count");
    if (in_channels == 0 || n_azim == 0 || n_elev == 0)
      throw std::invalid_argument("CnnArch: zero-sized dimension");
  }
};

/// Offsets of every named parameter tensor inside one flat parameter vector.
/// A single flat vector keeps the optimizer, serialization, and the
/// finite-difference sweep trivial.
struct ParamLayout {
  struct Entry {
    std::string name;
    std::vector<std::size_t> dims;
    std::size_t offset = 0;
    std::size_t size = 0;
  };
  std::vector<Entry> entries;
  std::size_t total = 0;

  static ParamLayout make(const CnnArch& arch) {
    arch.validate();
    ParamLayout layout;
    auto add = [&layout](std::string name, std::vector<std::size_t> dims) {
      Entry e;
      e.name = std::move(name);
      e.dims = std::move(dims);
      e.offset = layout.total;
      e.size = 1;
      for (std::size_t d : e.dims) e.size *= d;
      layout.total += e.size;
      layout.entries.push_back(std::move(e));
    };
    std::size_t c_in = arch.in_channels;
    for (int i = 0; i < 3; ++i) {
      const std::string tag = std::to_string(i + 1);
      add("conv" + tag + ".weight", {arch.widths[i], c_in, 3, 3});
      add("conv" + tag + ".bias", {arch.widths[i]});
      add("gn" + tag + ".gamma", {arch.widths[i]});
      add("gn" + tag + ".beta", {arch.widths[i]});
      c_in = arch.widths[i];
    }
    add("fc_azim.weight", {arch.n_azim, arch.widths[2]});
    add("fc_azim.bias", {arch.n_azim});
    add("fc_elev.weight", {arch.n_elev, arch.widths[2]});
    add("fc_elev.bias", {arch.n_elev});
    return layout;
  }

  const Entry& find(std::string_view name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    throw std::out_of_range("ParamLayout: no entry named " + std::string(name));
  }
};

template <typename T>
struct CnnParams {
  CnnArch arch;
  ParamLayout layout;
  std::vector<T> flat;

  explicit CnnParams(const CnnArch& a = {}) : arch(a), layout(ParamLayout::make(a)) {
    flat.assign(layout.total, T(0));
  }

  std::span<T> view(std::string_view name) {
    const auto& e = layout.find(name);
    return {flat.data() + e.offset, e.size};
  }
  std::span<const T> view(std::string_view name) const {
    const auto& e = layout.find(name);
    return {flat.data() + e.offset, e.size};
  }

  template <typename U>
  CnnParams<U> cast() const {
    CnnParams<U> out(arch);
    for (std::size_t i = 0; i < flat.size(); ++i) out.flat[i] = static_cast<U>(flat[i]);
    return out;
  }
};

/// He-normal conv weights, unit GroupNorm scale, small random head weights.
template <typename T>
CnnParams<T> init_params(const CnnArch& arch, Rng& rng) {
  CnnParams<T> p(arch);
  std::size_t c_in = arch.in_channels;
  for (int i = 0; i < 3; ++i) {
    const std::string tag = std::to_string(i + 1);
    const double scale = std::sqrt(2.0 / (9.0 * static_cast<double>(c_in)));
    for (T& w : p.view("conv" + tag + ".weight")) w = static_cast<T>(scale * rng.normal());
    for (T& g : p.view("gn" + tag + ".gamma")) g = T(1);
    c_in = arch.widths[i];
  }
  const double head_scale = std::sqrt(1.0 / static_cast<double>(arch.widths[2]));
  for (T& w : p.view("fc_azim.weight")) w = static_cast<T>(head_scale * rng.normal());
  for (T& w : p.view("fc_elev.weight")) w = static_cast<T>(head_scale * rng.normal());
  return p;
}

struct DoaPrediction {
  std::vector<double> p_azim;
  std::vector<double> p_elev;
};

struct DoaLabel {
  std::size_t azim_class = 0;
  std::size_t elev_class = 0;
};

inline std::pair<std::size_t, std::size_t> argmax_classes(const DoaPrediction& pred) {
  auto lowest_argmax = [](const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
      if (v[i] > v[best]) best = i;
    return best;
  };
  return {lowest_argmax(pred.p_azim), lowest_argmax(pred.p_elev)};
}

struct JointLoss {
  double total = 0.0;
  double azim = 0.0;
  double elev = 0.0;
};

namespace detail {

inline void gemm(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                 float* c, int ldc, bool trans_a, bool trans_b, float beta) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0f, a, lda, b, ldb, beta, c,
              ldc);
}

inline void gemm(int m, int n, int k, const double* a, int lda, const double* b, int ldb,
                 double* c, int ldc, bool trans_a, bool trans_b, double beta) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, lda, b, ldb, beta, c,
              ldc);
}

template <typename T>
void im2col_3x3(const T* in, std::size_t c_in, std::size_t h, std::size_t w, T* col) {
  // col is (c_in * 9, h * w); kernel offsets scan row-major with pad 1
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < c_in; ++c) {
    const T* plane = in + c * hw;
    for (int dh = -1; dh <= 1; ++dh) {
      for (int dw = -1; dw <= 1; ++dw) {
        T* row = col + (c * 9 + static_cast<std::size_t>((dh + 1) * 3 + (dw + 1))) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dh;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(row + y * w, row + (y + 1) * w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          T* dst = row + y * w;
          if (dw < 0) {
            dst[0] = T(0);
            std::copy(src, src + w - 1, dst + 1);
          } else if (dw > 0) {
            std::copy(src + 1, src + w, dst);
            dst[w - 1] = T(0);
          } else {
            std::copy(src, src + w, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_3x3(const T* col, std::size_t c_in, std::size_t h, std::size_t w, T* in_grad) {
  const std::size_t hw = h * w;
  std::fill(in_grad, in_grad + c_in * hw, T(0));
  for (std::size_t c = 0; c < c_in; ++c) {
    T* plane = in_grad + c * hw;
    for (int dh = -1; dh <= 1; ++dh) {
      for (int dw = -1; dw <= 1; ++dw) {
        const T* row = col + (c * 9 + static_cast<std::size_t>((dh + 1) * 3 + (dw + 1))) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dh;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          const T* src = row + y * w;
          if (dw < 0) {
            for (std::size_t x = 1; x < w; ++x) dst[x - 1] += src[x];
          } else if (dw > 0) {
            for (std::size_t x = 0; x + 1 < w; ++x) dst[x + 1] += src[x];
          } else {
            for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
          }
        }
      }
    }
  }
}

constexpr double kGnEps = 1e-5;

}  // namespace detail

/// Cached activations from one forward pass; reused across samples to avoid
/// reallocation. One workspace serves one thread.
template <typename T>
struct CnnWorkspace {
  struct Block {
    std::size_t c_in = 0, c_out = 0, h = 0, w = 0;  // conv input geometry
    std::size_t hp = 0, wp = 0;                     // pooled output geometry
    std::vector<T> col;                             // im2col of the conv input
    std::vector<T> xhat;                            // normalized pre-scale GN output
    std::vector<T> inv_std;                         // per group
    std::vector<T> act;                             // post-ReLU
    std::vector<T> pooled;
    std::vector<std::size_t> argmax;                // flat index into act
  };
  std::array<Block, 3> blocks;
  std::vector<T> gap;
  std::vector<T> logits_azim;
  std::vector<T> logits_elev;
  std::vector<T> scratch_a;  // conv output / upstream gradient
  std::vector<T> scratch_b;  // column gradient / input gradient
};

/// Forward pass on one (C,H,W) sample. Activations are cached in `ws` for a
/// subsequent backward() call. Returns softmax probabilities for both heads.
template <typename T>
DoaPrediction forward(const CnnParams<T>& params, std::span<const T> x, std::size_t h,
                      std::size_t w, CnnWorkspace<T>& ws) {
  const CnnArch& arch = params.arch;
  if (x.size() != arch.in_channels * h * w)
    throw std::invalid_argument("forward: input size does not match (C,H,W)");
  if (h < 8 || w < 8) throw std::invalid_argument("forward: input too small to pool 3 times");

  const T* cur = x.data();
  std::size_t c_in = arch.in_channels, ch = h, cw = w;

  for (int i = 0; i < 3; ++i) {
    auto& blk = ws.blocks[static_cast<std::size_t>(i)];
    const std::size_t c_out = arch.widths[static_cast<std::size_t>(i)];
    const std::size_t hw = ch * cw;
    blk.c_in = c_in;
    blk.c_out = c_out;
    blk.h = ch;
    blk.w = cw;
    blk.col.resize(c_in * 9 * hw);
    detail::im2col_3x3(cur, c_in, ch, cw, blk.col.data());

    const std::string tag = std::to_string(i + 1);
    const auto weight = params.view("conv" + tag + ".weight");
    const auto bias = params.view("conv" + tag + ".bias");
    ws.scratch_a.resize(c_out * hw);
    detail::gemm(static_cast<int>(c_out), static_cast<int>(hw), static_cast<int>(c_in * 9),
                 weight.data(), static_cast<int>(c_in * 9), blk.col.data(),
                 static_cast<int>(hw), ws.scratch_a.data(), static_cast<int>(hw), false,
                 false, T(0));
    for (std::size_t c = 0; c < c_out; ++c) {
      T* plane = ws.scratch_a.data() + c * hw;
      for (std::size_t s = 0; s < hw; ++s) plane[s] += bias[c];
    }

    // GroupNorm over (channels-in-group, H, W)
    const std::size_t n_groups = arch.groups[static_cast<std::size_t>(i)];
    const std::size_t cpg = c_out / n_groups;
    const auto gamma = params.view("gn" + tag + ".gamma");
    const auto beta = params.view("gn" + tag + ".beta");
    blk.xhat.resize(c_out * hw);
    blk.inv_std.resize(n_groups);
    blk.act.resize(c_out * hw);
    for (std::size_t g = 0; g < n_groups; ++g) {
      const T* gin = ws.scratch_a.data() + g * cpg * hw;
      const std::size_t n = cpg * hw;
      double mean = 0.0;
      for (std::size_t s = 0; s < n; ++s) mean += static_cast<double>(gin[s]);
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const double d = static_cast<double>(gin[s]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(n);
      const T inv_std = static_cast<T>(1.0 / std::sqrt(var + detail::kGnEps));
      blk.inv_std[g] = inv_std;
      T* xhat = blk.xhat.data() + g * cpg * hw;
      T* act = blk.act.data() + g * cpg * hw;
      for (std::size_t cc = 0; cc < cpg; ++cc) {
        const std::size_t c = g * cpg + cc;
        for (std::size_t s = 0; s < hw; ++s) {
          const T xh = (gin[cc * hw + s] - static_cast<T>(mean)) * inv_std;
          xhat[cc * hw + s] = xh;
          const T y = gamma[c] * xh + beta[c];
          act[cc * hw + s] = y > T(0) ? y : T(0);
        }
      }
    }

    // 2x2 maxpool, stride 2, floor; ties keep the first position scanned
    blk.hp = ch / 2;
    blk.wp = cw / 2;
    blk.pooled.resize(c_out * blk.hp * blk.wp);
    blk.argmax.resize(blk.pooled.size());
    for (std::size_t c = 0; c < c_out; ++c) {
      const T* plane = blk.act.data() + c * hw;
      T* out = blk.pooled.data() + c * blk.hp * blk.wp;
      std::size_t* arg = blk.argmax.data() + c * blk.hp * blk.wp;
      for (std::size_t y = 0; y < blk.hp; ++y) {
        for (std::size_t xw = 0; xw < blk.wp; ++xw) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t di = 0; di < 2; ++di) {
            for (std::size_t dj = 0; dj < 2; ++dj) {
              const std::size_t idx = (2 * y + di) * cw + (2 * xw + dj);
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          out[y * blk.wp + xw] = best;
          arg[y * blk.wp + xw] = c * hw + best_idx;
        }
      }
    }

    cur = blk.pooled.data();
    c_in = c_out;
    ch = blk.hp;
    cw = blk.wp;
  }

  // global average pool
  const std::size_t feat = arch.widths[2];
  const std::size_t hw3 = ch * cw;
  ws.gap.resize(feat);
  for (std::size_t c = 0; c < feat; ++c) {
    double acc = 0.0;
    const T* plane = cur + c * hw3;
    for (std::size_t s = 0; s < hw3; ++s) acc += static_cast<double>(plane[s]);
    ws.gap[c] = static_cast<T>(acc / static_cast<double>(hw3));
  }

  auto head = [&](std::string_view wname, std::string_view bname, std::size_t n_out,
                  std::vector<T>& logits) {
    const auto weight = params.view(wname);
    const auto bias = params.view(bname);
    logits.resize(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
      double acc = static_cast<double>(bias[i]);
      for (std::size_t c = 0; c < feat; ++c)
        acc += static_cast<double>(weight[i * feat + c]) * static_cast<double>(ws.gap[c]);
      logits[i] = static_cast<T>(acc);
    }
  };
  head("fc_azim.weight", "fc_azim.bias", arch.n_azim, ws.logits_azim);
  head("fc_elev.weight", "fc_elev.bias", arch.n_elev, ws.logits_elev);

  auto softmax = [](const std::vector<T>& logits) {
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits) {
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("forward: non-finite logit");
      mx = std::max(mx, static_cast<double>(v));
    }
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      p[i] = std::exp(static_cast<double>(logits[i]) - mx);
      z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
  };
  return DoaPrediction{softmax(ws.logits_azim), softmax(ws.logits_elev)};
}

/// Joint cross-entropy of both heads from raw logits, in log-sum-exp form.
template <typename T>
JointLoss joint_loss(std::span<const T> logits_azim, std::span<const T> logits_elev,
                     const DoaLabel& label) {
  if (label.azim_class >= logits_azim.size() || label.elev_class >= logits_elev.size())
    throw std::invalid_argument("joint_loss: label index out of range");
  auto ce = [](std::span<const T> logits, std::size_t truth) {
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (T v : logits) z += std::exp(static_cast<double>(v) - mx);
    return mx + std::log(z) - static_cast<double>(logits[truth]);
  };
  JointLoss loss;
  loss.azim = ce(logits_azim, label.azim_class);
  loss.elev = ce(logits_elev, label.elev_class);
  loss.total = loss.azim + loss.elev;
  return loss;
}

/// Reverse-mode gradients of joint_loss for the sample cached in `ws`.
/// Gradients are accumulated (+=) into `grad`, which must be sized like the
/// flat parameter vector.
template <typename T>
void backward(const CnnParams<T>& params, CnnWorkspace<T>& ws, const DoaLabel& label,
              std::span<T> grad) {
  const CnnArch& arch = params.arch;
  if (grad.size() != params.flat.size())
    throw std::invalid_argument("backward: gradient buffer size mismatch");

  const std::size_t feat = arch.widths[2];
  std::vector<T> dgap(feat, T(0));

  auto head_backward = [&](const std::vector<T>& logits, std::size_t truth,
                           std::string_view wname, std::string_view bname) {
    // dlogits = softmax(logits) - onehot(truth)
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits) mx = std::max(mx, static_cast<double>(v));
    double z = 0.0;
    for (T v : logits) z += std::exp(static_cast<double>(v) - mx);
    const auto& went = params.layout.find(wname);
    const auto& bent = params.layout.find(bname);
    const T* weight = params.flat.data() + went.offset;
    T* dw = grad.data() + went.offset;
    T* db = grad.data() + bent.offset;
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const double p = std::exp(static_cast<double>(logits[i]) - mx) / z;
      const T dl = static_cast<T>(p - (i == truth ? 1.0 : 0.0));
      db[i] += dl;
      for (std::size_t c = 0; c < feat; ++c) {
        dw[i * feat + c] += dl * ws.gap[c];
        dgap[c] += dl * weight[i * feat + c];
      }
    }
  };
  head_backward(ws.logits_azim, label.azim_class, "fc_azim.weight", "fc_azim.bias");
  head_backward(ws.logits_elev, label.elev_class, "fc_elev.weight", "fc_elev.bias");

  // global average pool: spread each channel gradient uniformly
  const auto& last = ws.blocks[2];
  const std::size_t hw3 = last.hp * last.wp;
  std::vector<T>& dcur = ws.scratch_a;
  dcur.assign(feat * hw3, T(0));
  for (std::size_t c = 0; c < feat; ++c) {
    const T v = dgap[c] / static_cast<T>(hw3);
    std::fill(dcur.begin() + static_cast<long>(c * hw3),
              dcur.begin() + static_cast<long>((c + 1) * hw3), v);
  }

  for (int i = 2; i >= 0; --i) {
    auto& blk = ws.blocks[static_cast<std::size_t>(i)];
    const std::size_t hw = blk.h * blk.w;
    const std::string tag = std::to_string(i + 1);

    // maxpool: route each pooled gradient to its argmax position
    std::vector<T> dact(blk.c_out * hw, T(0));
    for (std::size_t s = 0; s < blk.argmax.size(); ++s) dact[blk.argmax[s]] += dcur[s];

    // ReLU
    for (std::size_t s = 0; s < dact.size(); ++s)
      if (blk.act[s] <= T(0)) dact[s] = T(0);

    // GroupNorm
    const std::size_t n_groups = arch.groups[static_cast<std::size_t>(i)];
    const std::size_t cpg = blk.c_out / n_groups;
    const auto gamma = params.view("gn" + tag + ".gamma");
    const auto& gent = params.layout.find("gn" + tag + ".gamma");
    const auto& bent = params.layout.find("gn" + tag + ".beta");
    T* dgamma = grad.data() + gent.offset;
    T* dbeta = grad.data() + bent.offset;
    for (std::size_t g = 0; g < n_groups; ++g) {
      const std::size_t base = g * cpg * hw;
      const std::size_t n = cpg * hw;
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t cc = 0; cc < cpg; ++cc) {
        const std::size_t c = g * cpg + cc;
        double dg = 0.0, db = 0.0;
        for (std::size_t s = 0; s < hw; ++s) {
          const std::size_t idx = base + cc * hw + s;
          const double dy = static_cast<double>(dact[idx]);
          const double xh = static_cast<double>(blk.xhat[idx]);
          dg += dy * xh;
          db += dy;
          const double dxh = dy * static_cast<double>(gamma[c]);
          s1 += dxh;
          s2 += dxh * xh;
        }
        dgamma[c] += static_cast<T>(dg);
        dbeta[c] += static_cast<T>(db);
      }
      const double inv_n = 1.0 / static_cast<double>(n);
      const double inv_std = static_cast<double>(blk.inv_std[g]);
      for (std::size_t cc = 0; cc < cpg; ++cc) {
        const std::size_t c = g * cpg + cc;
        for (std::size_t s = 0; s < hw; ++s) {
          const std::size_t idx = base + cc * hw + s;
          const double dxh = static_cast<double>(dact[idx]) * static_cast<double>(gamma[c]);
          const double xh = static_cast<double>(blk.xhat[idx]);
          dact[idx] = static_cast<T>(inv_std * (dxh - inv_n * (s1 + xh * s2)));
        }
      }
    }

    // convolution: dact is now the gradient at the conv output
    const auto& went = params.layout.find("conv" + tag + ".weight");
    const auto& bent2 = params.layout.find("conv" + tag + ".bias");
    T* dw = grad.data() + went.offset;
    T* db = grad.data() + bent2.offset;
    for (std::size_t c = 0; c < blk.c_out; ++c) {
      double acc = 0.0;
      for (std::size_t s = 0; s < hw; ++s) acc += static_cast<double>(dact[c * hw + s]);
      db[c] += static_cast<T>(acc);
    }
    detail::gemm(static_cast<int>(blk.c_out), static_cast<int>(blk.c_in * 9),
                 static_cast<int>(hw), dact.data(), static_cast<int>(hw), blk.col.data(),
                 static_cast<int>(hw), dw, static_cast<int>(blk.c_in * 9), false, true,
                 T(1));

    if (i > 0) {
      const T* weight = params.flat.data() + went.offset;
      ws.scratch_b.resize(blk.c_in * 9 * hw);
      detail::gemm(static_cast<int>(blk.c_in * 9), static_cast<int>(hw),
                   static_cast<int>(blk.c_out), weight, static_cast<int>(blk.c_in * 9),
                   dact.data(), static_cast<int>(hw), ws.scratch_b.data(),
                   static_cast<int>(hw), true, false, T(0));
      dcur.assign(blk.c_in * hw, T(0));
      detail::col2im_3x3(ws.scratch_b.data(), blk.c_in, blk.h, blk.w, dcur.data());
    }
  }
}

struct ParamMacCounts {
  std::size_t params = 0;
  std::size_t macs = 0;
};

/// Analytic parameter and multiply-accumulate counts for one forward pass on
/// an (in_channels, h, w) input. MACs count convolution and head multiplies.
inline ParamMacCounts count_params_and_macs(const CnnArch& arch, std::size_t h,
                                            std::size_t w) {
  arch.validate();
  ParamMacCounts out;
  std::size_t c_in = arch.in_channels, ch = h, cw = w;
  for (int i = 0; i < 3; ++i) {
    const std::size_t c_out = arch.widths[static_cast<std::size_t>(i)];
    out.params += c_out * c_in * 9 + c_out;  // conv weight + bias
    out.params += 2 * c_out;                 // GroupNorm scale + shift
    out.macs += c_out * c_in * 9 * ch * cw;
    c_in = c_out;
    ch /= 2;
    cw /= 2;
  }
  out.params += arch.n_azim * arch.widths[2] + arch.n_azim;
  out.params += arch.n_elev * arch.widths[2] + arch.n_elev;
  out.macs += (arch.n_azim + arch.n_elev) * arch.widths[2];
  return out;
}

// --- feature preprocessing ---------------------------------------------------

/// Standardizes one feature tensor in place before it reaches the network.
///
/// Magnitude channels (the first half) are optionally compressed with
/// log(1 + m), then jointly shifted/scaled to zero mean and unit variance;
/// standardizing them jointly preserves interchannel level cues.
///
/// Raw STFT phases are a poor input: the source's own random phase is common
/// to every channel and swamps the interchannel delays, and bins with no
/// signal carry uniformly random phase over most of the plane. Each phase
/// channel is therefore rewritten as the phase difference against the first
/// phase channel, wrapped to (-pi, pi], and scaled by a per-bin gate
/// g = m / (m + mean(m)) built from the channel-averaged raw magnitude, so
/// that out-of-band bins contribute nothing. The reference phase channel
/// becomes the gate map itself (it carries the band occupancy), and the
/// whole phase block is then jointly standardized like the magnitudes.
template <typename T>
void preprocess_features(std::span<T> x, std::size_t channels, bool log_magnitude) {
  if (channels == 0 || x.size() % channels != 0)
    throw std::invalid_argument("preprocess_features: bad channel count");
  const std::size_t plane = x.size() / channels;
  const std::size_t n_mag = channels / 2;
  const std::size_t mag = n_mag * plane;

  auto standardize = [](std::span<T> block) {
    double mean = 0.0;
    for (const T v : block) mean += static_cast<double>(v);
    mean /= static_cast<double>(block.size());
    double var = 0.0;
    for (const T v : block) {
      const double d = static_cast<double>(v) - mean;
      var += d * d;
    }
    var /= static_cast<double>(block.size());
    const double inv = 1.0 / std::sqrt(var + 1e-8);
    for (T& v : block) v = static_cast<T>((static_cast<double>(v) - mean) * inv);
  };

  if (n_mag > 0 && channels > n_mag) {
    // gate from the raw (pre-log) magnitudes
    std::vector<double> gate(plane);
    double gate_mean = 0.0;
    for (std::size_t k = 0; k < plane; ++k) {
      double m = 0.0;
      for (std::size_t c = 0; c < n_mag; ++c) m += static_cast<double>(x[c * plane + k]);
      gate[k] = m / static_cast<double>(n_mag);
      gate_mean += gate[k];
    }
    gate_mean /= static_cast<double>(plane);
    for (std::size_t k = 0; k < plane; ++k)
      gate[k] = gate[k] / (gate[k] + gate_mean + 1e-20);

    T* ref = x.data() + mag;
    for (std::size_t c = channels - 1; c > n_mag; --c) {
      T* ph = x.data() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        double d = static_cast<double>(ph[k]) - static_cast<double>(ref[k]);
        while (d > kPi) d -= 2.0 * kPi;
        while (d <= -kPi) d += 2.0 * kPi;
        ph[k] = static_cast<T>(gate[k] * d);
      }
    }
    for (std::size_t k = 0; k < plane; ++k) ref[k] = static_cast<T>(gate[k]);
    standardize(x.subspan(mag));
  }

  if (log_magnitude)
    for (std::size_t i = 0; i < mag; ++i)
      x[i] = static_cast<T>(std::log1p(static_cast<double>(x[i])));
  if (n_mag > 0) standardize(x.first(mag));
}

// --- training ----------------------------------------------------------------

/// Read access to one dataset split. load() fills `features` with the raw
/// stored tensor (preprocessing happens in the trainer) and must be safe to
/// call concurrently from multiple threads.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual std::array<std::size_t, 3> feature_shape() const = 0;  // (C,H,W)
  virtual void load(std::size_t index, std::vector<float>& features,
                    DoaLabel& label) const = 0;
};

class InMemorySamples final : public SampleSource {
 public:
  std::array<std::size_t, 3> shape{};
  std::vector<std::vector<float>> features;
  std::vector<DoaLabel> labels;

  std::size_t size() const override { return features.size(); }
  std::array<std::size_t, 3> feature_shape() const override { return shape; }
  void load(std::size_t index, std::vector<float>& out, DoaLabel& label) const override {
    out = features.at(index);
    label = labels.at(index);
  }
};

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t n_threads = 1;
  bool log_magnitude = true;
  double max_seconds = 0.0;  // 0 disables the wall-clock stop
};

struct EpochStats {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_azim_acc = 0.0;
  double val_elev_acc = 0.0;
};

struct TrainResult {
  CnnParams<float> params;  // best validation loss
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
};

struct EvalStats {
  double loss = 0.0;
  double azim_acc = 0.0;
  double elev_acc = 0.0;
  std::vector<std::size_t> azim_confusion;  // n_azim x n_azim, row = truth
  std::vector<std::size_t> elev_confusion;
};

template <typename T>
EvalStats evaluate(const CnnParams<T>& params, const SampleSource& data,
                   bool log_magnitude) {
  const auto shape = data.feature_shape();
  EvalStats stats;
  stats.azim_confusion.assign(params.arch.n_azim * params.arch.n_azim, 0);
  stats.elev_confusion.assign(params.arch.n_elev * params.arch.n_elev, 0);
  CnnWorkspace<T> ws;
  std::vector<float> raw;
  std::vector<T> x;
  DoaLabel label;
  std::size_t azim_hits = 0, elev_hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    data.load(i, raw, label);
    x.assign(raw.begin(), raw.end());
    preprocess_features<T>(x, shape[0], log_magnitude);
    const auto pred = forward(params, std::span<const T>(x), shape[1], shape[2], ws);
    stats.loss += joint_loss<T>(ws.logits_azim, ws.logits_elev, label).total;
    const auto [a, b] = argmax_classes(pred);
    stats.azim_confusion[label.azim_class * params.arch.n_azim + a]++;
    stats.elev_confusion[label.elev_class * params.arch.n_elev + b]++;
    azim_hits += (a == label.azim_class);
    elev_hits += (b == label.elev_class);
  }
  const double n = std::max<double>(1.0, static_cast<double>(data.size()));
  stats.loss /= n;
  stats.azim_acc = static_cast<double>(azim_hits) / n;
  stats.elev_acc = static_cast<double>(elev_hits) / n;
  return stats;
}

/// Minibatch Adam on the joint loss. Per-sample gradients land in per-slot
/// buffers and are summed in sample order, so results do not depend on the
/// thread count; fixed seed + fixed thread schedule gives bit-identical runs.
inline TrainResult train(const CnnArch& arch, const SampleSource& train_data,
                         const SampleSource& val_data, const TrainOptions& opts) {
  if (train_data.size() == 0 || val_data.size() == 0)
    throw std::invalid_argument("train: empty dataset split");
  const auto shape = train_data.feature_shape();
  if (shape[0] != arch.in_channels)
    throw std::invalid_argument("train: dataset channel count does not match architecture");

  Rng rng(opts.seed);
  CnnParams<float> params = init_params<float>(arch, rng);
  std::vector<float> adam_m(params.flat.size(), 0.0f);
  std::vector<float> adam_v(params.flat.size(), 0.0f);
  std::size_t adam_t = 0;

  TrainResult result{params, {}, 0};
  double best_val_loss = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const std::size_t batch = std::max<std::size_t>(1, opts.batch_size);
  std::vector<std::vector<float>> slot_grads(batch);
  std::vector<double> slot_losses(batch);

  const auto t_start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    // Fisher-Yates shuffle
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.uniform_int(i)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t count = std::min(batch, order.size() - start);
      const std::size_t n_threads = std::max<std::size_t>(1, opts.n_threads);

      auto run_slots = [&](std::size_t lo, std::size_t hi) {
        CnnWorkspace<float> ws;
        std::vector<float> raw;
        std::vector<float> x;
        DoaLabel label;
        for (std::size_t s = lo; s < hi; ++s) {
          train_data.load(order[start + s], raw, label);
          x.assign(raw.begin(), raw.end());
          preprocess_features<float>(x, shape[0], opts.log_magnitude);
          forward(params, std::span<const float>(x), shape[1], shape[2], ws);
          slot_losses[s] = joint_loss<float>(ws.logits_azim, ws.logits_elev, label).total;
          slot_grads[s].assign(params.flat.size(), 0.0f);
          backward(params, ws, label, std::span<float>(slot_grads[s]));
        }
      };
      if (n_threads <= 1) {
        run_slots(0, count);
      } else {
        std::vector<std::thread> workers;
        const std::size_t chunk = (count + n_threads - 1) / n_threads;
        for (std::size_t t = 0; t < n_threads; ++t) {
          const std::size_t lo = t * chunk, hi = std::min(lo + chunk, count);
          if (lo >= hi) break;
          workers.emplace_back(run_slots, lo, hi);
        }
        for (auto& th : workers) th.join();
      }

      double batch_loss = 0.0;
      for (std::size_t s = 0; s < count; ++s) batch_loss += slot_losses[s];
      batch_loss /= static_cast<double>(count);
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch offset " + std::to_string(start));
      epoch_loss += batch_loss * static_cast<double>(count);

      // fixed-order merge, then Adam
      adam_t++;
      const float inv_count = 1.0f / static_cast<float>(count);
      const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(adam_t));
      const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(adam_t));
      for (std::size_t k = 0; k < params.flat.size(); ++k) {
        float g = 0.0f;
        for (std::size_t s = 0; s < count; ++s) g += slot_grads[s][k];
        g *= inv_count;
        adam_m[k] = static_cast<float>(opts.beta1) * adam_m[k] +
                    (1.0f - static_cast<float>(opts.beta1)) * g;
        adam_v[k] = static_cast<float>(opts.beta2) * adam_v[k] +
                    (1.0f - static_cast<float>(opts.beta2)) * g * g;
        const double mhat = static_cast<double>(adam_m[k]) / bc1;
        const double vhat = static_cast<double>(adam_v[k]) / bc2;
        params.flat[k] -= static_cast<float>(opts.learning_rate * mhat /
                                             (std::sqrt(vhat) + opts.adam_eps));
      }
    }

    EpochStats stats;
    stats.train_loss = epoch_loss / static_cast<double>(order.size());
    const auto val = evaluate(params, val_data, opts.log_magnitude);
    stats.val_loss = val.loss;
    stats.val_azim_acc = val.azim_acc;
    stats.val_elev_acc = val.elev_acc;
    result.history.push_back(stats);
    if (val.loss < best_val_loss) {
      best_val_loss = val.loss;
      result.params = params;
      result.best_epoch = epoch;
    }

    if (opts.max_seconds > 0.0) {
      const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - t_start;
      if (elapsed.count() > opts.max_seconds) break;
    }
  }
  return result;
}

// --- checkpoint persistence ---------------------------------------------------

struct CheckpointMeta {
  CnnArch arch;
  std::vector<double> azimuth_classes_deg;
  std::vector<double> elevation_classes_deg;
  bool log_magnitude = true;
};

inline void save_checkpoint(const std::string& path, const CnnParams<float>& params,
                            const CheckpointMeta& meta) {
  TensorBundle bundle;
  auto add_meta = [&bundle](const std::string& name, const std::vector<double>& v) {
    Tensor<double> t({v.size()});
    t.data = v;
    bundle.add(name, t);
  };
  {
    Tensor<double> t({10});
    t.data = {static_cast<double>(params.arch.in_channels),
              static_cast<double>(params.arch.widths[0]),
              static_cast<double>(params.arch.widths[1]),
              static_cast<double>(params.arch.widths[2]),
              static_cast<double>(params.arch.groups[0]),
              static_cast<double>(params.arch.groups[1]),
              static_cast<double>(params.arch.groups[2]),
              static_cast<double>(params.arch.n_azim),
              static_cast<double>(params.arch.n_elev),
              meta.log_magnitude ? 1.0 : 0.0};
    bundle.add("meta.arch", t);
  }
  add_meta("meta.azimuth_classes_deg", meta.azimuth_classes_deg);
  add_meta("meta.elevation_classes_deg", meta.elevation_classes_deg);
  for (const auto& e : params.layout.entries) {
    Tensor<float> t(e.dims);
    std::copy(params.flat.begin() + static_cast<long>(e.offset),
              params.flat.begin() + static_cast<long>(e.offset + e.size), t.data.begin());
    bundle.add(e.name, t);
  }
  write_bundle(path, bundle);
}

inline std::pair<CnnParams<float>, CheckpointMeta> load_checkpoint(const std::string& path) {
  const TensorBundle bundle = read_bundle(path);
  const auto& arch_t = bundle.get<double>("meta.arch");
  if (arch_t.data.size() != 10) throw std::runtime_error("checkpoint: bad arch record");
  CnnArch arch;
  arch.in_channels = static_cast<std::size_t>(arch_t.data[0]);
  arch.widths = {static_cast<std::size_t>(arch_t.data[1]),
                 static_cast<std::size_t>(arch_t.data[2]),
                 static_cast<std::size_t>(arch_t.data[3])};
  arch.groups = {static_cast<std::size_t>(arch_t.data[4]),
                 static_cast<std::size_t>(arch_t.data[5]),
                 static_cast<std::size_t>(arch_t.data[6])};
  arch.n_azim = static_cast<std::size_t>(arch_t.data[7]);
  arch.n_elev = static_cast<std::size_t>(arch_t.data[8]);

  CheckpointMeta meta;
  meta.arch = arch;
  meta.log_magnitude = arch_t.data[9] != 0.0;
  meta.azimuth_classes_deg = bundle.get<double>("meta.azimuth_classes_deg").data;
  meta.elevation_classes_deg = bundle.get<double>("meta.elevation_classes_deg").data;

  CnnParams<float> params(arch);
  for (const auto& e : params.layout.entries) {
    const auto& t = bundle.get<float>(e.name);
    if (t.data.size() != e.size)
      throw std::runtime_error("checkpoint: size mismatch for " + e.name);
    std::copy(t.data.begin(), t.data.end(), params.flat.begin() + static_cast<long>(e.offset));
  }
  return {std::move(params), std::move(meta)};
}

}  // namespace sfanc
