// Copyright 2026 The LPNAS Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "lpnas/ops.h"

#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

namespace lpnas {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

std::string Dim(int v) { return std::to_string(v); }

void Require(bool ok, const char* op, const char* dim, const std::string& msg) {
  if (!ok) throw ShapeError(op, dim, msg);
}

// Unfolds one image (C, H, W) into columns (C*k*k, H*W) with zero padding.
template <typename T>
void Im2Col(const T* img, int c, int h, int w, int k, T* col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const T* plane = img + ci * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* out = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(out, out + w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            out[x] = (sx >= 0 && sx < w) ? src[sx] : T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void Col2ImAdd(const T* col, int c, int h, int w, int k, T* img) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row =
            col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        T* plane = img + ci * hw;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* in = row + static_cast<std::size_t>(y) * w;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad;
            if (sx >= 0 && sx < w) dst[sx] += in[x];
          }
        }
      }
    }
  }
}

template <typename T>
void AddInto(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += s[i];
}

template <typename T>
T Gelu(T x) {
  return x * T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <typename T>
T GeluGrad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
  return cdf + x * pdf;
}

template <typename T>
T Sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, std::optional<Var<T>> bias) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  const int k = ws.h;
  Require(ws.h == ws.w, "conv2d", "kernel",
          "non-square kernel " + ws.ToString());
  Require(k == 1 || k == 3 || k == 5, "conv2d", "kernel",
          "kernel size " + Dim(k) + " not in {1,3,5}");
  Require(ws.c == is.c, "conv2d", "C",
          "weight expects C_in=" + Dim(ws.c) + ", input has C=" + Dim(is.c));
  const int cout = ws.n;
  if (bias) {
    Require(bias->value().size() == static_cast<std::size_t>(cout), "conv2d",
            "C", "bias length " + Dim(static_cast<int>(bias->value().size())) +
                     " vs C_out=" + Dim(cout));
  }
  const Shape os{is.n, cout, is.h, is.w};
  Tensor<T> out(os);
  const std::size_t hw = is.plane();
  const int ckk = is.c * k * k;
  std::vector<T> col(k == 1 ? 0 : static_cast<std::size_t>(ckk) * hw);
  CMapMat<T> wm(weight.value().data(), cout, ckk);
  for (int n = 0; n < is.n; ++n) {
    const T* img = input.value().data() + static_cast<std::size_t>(n) * is.c * hw;
    const T* src = img;
    if (k != 1) {
      Im2Col(img, is.c, is.h, is.w, k, col.data());
      src = col.data();
    }
    MapMat<T> om(out.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
    om.noalias() = wm * CMapMat<T>(src, ckk, hw);
    if (bias) {
      const T* b = bias->value().data();
      for (int co = 0; co < cout; ++co) om.row(co).array() += b[co];
    }
  }
  Tape<T>& tape = input.tape();
  const int xid = input.id(), wid = weight.id();
  const int bid = bias ? bias->id() : -1;
  auto fn = [xid, wid, bid, k](Tape<T>& t, int self) {
    const Tensor<T>& x = t.value(xid);
    const Tensor<T>& w = t.value(wid);
    const Tensor<T>& gy = t.grad(self);
    const Shape is = x.shape();
    const int cout = w.shape().n;
    const std::size_t hw = is.plane();
    const int ckk = is.c * k * k;
    const bool need_x = t.requires_grad(xid);
    const bool need_w = t.requires_grad(wid);
    const bool need_b = bid >= 0 && t.requires_grad(bid);
    std::vector<T> col(k == 1 ? 0 : static_cast<std::size_t>(ckk) * hw);
    std::vector<T> dcol(need_x && k != 1 ? static_cast<std::size_t>(ckk) * hw : 0);
    CMapMat<T> wm(w.data(), cout, ckk);
    for (int n = 0; n < is.n; ++n) {
      CMapMat<T> gm(gy.data() + static_cast<std::size_t>(n) * cout * hw, cout, hw);
      const T* img = x.data() + static_cast<std::size_t>(n) * is.c * hw;
      if (need_w) {
        const T* src = img;
        if (k != 1) {
          Im2Col(img, is.c, is.h, is.w, k, col.data());
          src = col.data();
        }
        MapMat<T> gw(t.grad(wid).data(), cout, ckk);
        gw.noalias() += gm * CMapMat<T>(src, ckk, hw).transpose();
      }
      if (need_x) {
        T* gx = t.grad(xid).data() + static_cast<std::size_t>(n) * is.c * hw;
        if (k == 1) {
          MapMat<T>(gx, is.c, hw).noalias() += wm.transpose() * gm;
        } else {
          MapMat<T>(dcol.data(), ckk, hw).noalias() = wm.transpose() * gm;
          Col2ImAdd(dcol.data(), is.c, is.h, is.w, k, gx);
        }
      }
      if (need_b) {
        T* gb = t.grad(bid).data();
        for (int co = 0; co < cout; ++co) gb[co] += gm.row(co).sum();
      }
    }
  };
  if (bias) return tape.Record(std::move(out), {input, weight, *bias}, fn);
  return tape.Record(std::move(out), {input, weight}, fn);
}

template <typename T>
Var<T> depthwise_conv2d(Var<T> input, Var<T> weight) {
  const Shape is = input.shape();
  const Shape ws = weight.shape();
  const int k = ws.h;
  Require(ws.h == ws.w && (k == 1 || k == 3 || k == 5), "depthwise_conv2d",
          "kernel", "bad kernel " + ws.ToString());
  Require(ws.n == is.c, "depthwise_conv2d", "C",
          "weight has " + Dim(ws.n) + " channels, input has " + Dim(is.c));
  Require(ws.c == 1, "depthwise_conv2d", "C",
          "weight must be (C,1,k,k), got " + ws.ToString());
  Tensor<T> out(is);
  const int pad = k / 2;
  const T* x = input.value().data();
  const T* w = weight.value().data();
  T* y = out.data();
  const std::size_t hw = is.plane();
  for (int n = 0; n < is.n; ++n) {
    for (int c = 0; c < is.c; ++c) {
      const T* xp = x + (static_cast<std::size_t>(n) * is.c + c) * hw;
      T* yp = y + (static_cast<std::size_t>(n) * is.c + c) * hw;
      const T* wk = w + static_cast<std::size_t>(c) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          for (int oy = 0; oy < is.h; ++oy) {
            const int sy = oy + ky - pad;
            if (sy < 0 || sy >= is.h) continue;
            for (int ox = 0; ox < is.w; ++ox) {
              const int sx = ox + kx - pad;
              if (sx < 0 || sx >= is.w) continue;
              yp[oy * is.w + ox] += wv * xp[sy * is.w + sx];
            }
          }
        }
      }
    }
  }
  const int xid = input.id(), wid = weight.id();
  return input.tape().Record(
      std::move(out), {input, weight}, [xid, wid, k, pad](Tape<T>& t, int self) {
        const Tensor<T>& xt = t.value(xid);
        const Tensor<T>& wt = t.value(wid);
        const Tensor<T>& gy = t.grad(self);
        const Shape is = xt.shape();
        const std::size_t hw = is.plane();
        const bool need_x = t.requires_grad(xid);
        const bool need_w = t.requires_grad(wid);
        T* gx = need_x ? t.grad(xid).data() : nullptr;
        T* gw = need_w ? t.grad(wid).data() : nullptr;
        for (int n = 0; n < is.n; ++n) {
          for (int c = 0; c < is.c; ++c) {
            const std::size_t base = (static_cast<std::size_t>(n) * is.c + c) * hw;
            const T* xp = xt.data() + base;
            const T* gp = gy.data() + base;
            const T* wk = wt.data() + static_cast<std::size_t>(c) * k * k;
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                T acc = 0;
                const T wv = wk[ky * k + kx];
                for (int oy = 0; oy < is.h; ++oy) {
                  const int sy = oy + ky - pad;
                  if (sy < 0 || sy >= is.h) continue;
                  for (int ox = 0; ox < is.w; ++ox) {
                    const int sx = ox + kx - pad;
                    if (sx < 0 || sx >= is.w) continue;
                    const T g = gp[oy * is.w + ox];
                    acc += g * xp[sy * is.w + sx];
                    if (gx) gx[base + sy * is.w + sx] += g * wv;
                  }
                }
                if (gw) gw[static_cast<std::size_t>(c) * k * k + ky * k + kx] += acc;
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> batchnorm2d(Var<T> input, Var<T> gamma, Var<T> beta,
                   RunningStats<T>& stats, const BatchNormOptions& options) {
  const Shape is = input.shape();
  const int channels = is.c;
  Require(gamma.value().size() == static_cast<std::size_t>(channels) &&
              beta.value().size() == static_cast<std::size_t>(channels),
          "batchnorm2d", "C",
          "gamma/beta length " + Dim(static_cast<int>(gamma.value().size())) +
              " vs C=" + Dim(channels));
  Require(stats.mean.size() == static_cast<std::size_t>(channels), "batchnorm2d",
          "C", "running stats length mismatch");
  if (!(options.eps > 0)) throw InvalidArgument("batchnorm2d: eps must be > 0");
  const std::size_t hw = is.plane();
  const std::size_t m = static_cast<std::size_t>(is.n) * hw;
  const bool train = options.mode == BnMode::kTrain;
  if (train && m < 2) {
    throw ShapeError("batchnorm2d", "N*H*W",
                     "train mode needs at least 2 values per channel, got " +
                         std::to_string(m));
  }
  const T eps = static_cast<T>(options.eps);
  // Normalized values and per-channel inverse std are kept for backward.
  Tensor<T> xhat(is);
  std::vector<T> inv_std(channels);
  const T* x = input.value().data();
  for (int c = 0; c < channels; ++c) {
    T mean, var;
    if (train) {
      double s = 0, ss = 0;
      for (int n = 0; n < is.n; ++n) {
        const T* p = x + (static_cast<std::size_t>(n) * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(m);
      for (int n = 0; n < is.n; ++n) {
        const T* p = x + (static_cast<std::size_t>(n) * channels + c) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
          const double d = p[i] - mu;
          ss += d * d;
        }
      }
      mean = static_cast<T>(mu);
      var = static_cast<T>(ss / static_cast<double>(m));
      if (options.update_running_stats) {
        const T mom = static_cast<T>(options.momentum);
        const T unbiased = static_cast<T>(ss / static_cast<double>(m - 1));
        stats.mean[c] = (T(1) - mom) * stats.mean[c] + mom * mean;
        stats.var[c] = (T(1) - mom) * stats.var[c] + mom * unbiased;
      }
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    inv_std[c] = T(1) / std::sqrt(var + eps);
    for (int n = 0; n < is.n; ++n) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        xhat[base + i] = (x[base + i] - mean) * inv_std[c];
      }
    }
  }
  Tensor<T> out(is);
  const T* g = gamma.value().data();
  const T* b = beta.value().data();
  for (int n = 0; n < is.n; ++n) {
    for (int c = 0; c < channels; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = g[c] * xhat[base + i] + b[c];
    }
  }
  const int xid = input.id(), gid = gamma.id(), bid = beta.id();
  return input.tape().Record(
      std::move(out), {input, gamma, beta},
      [xid, gid, bid, train, xhat = std::move(xhat),
       inv_std = std::move(inv_std)](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        const Shape is = gy.shape();
        const int channels = is.c;
        const std::size_t hw = is.plane();
        const T mt = static_cast<T>(static_cast<std::size_t>(is.n) * hw);
        const T* gv = t.value(gid).data();
        for (int c = 0; c < channels; ++c) {
          T sum_dy = 0, sum_dy_xhat = 0;
          for (int n = 0; n < is.n; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              sum_dy += gy[base + i];
              sum_dy_xhat += gy[base + i] * xhat[base + i];
            }
          }
          if (t.requires_grad(gid)) t.grad(gid)[c] += sum_dy_xhat;
          if (t.requires_grad(bid)) t.grad(bid)[c] += sum_dy;
          if (!t.requires_grad(xid)) continue;
          T* gx = t.grad(xid).data();
          const T scale = gv[c] * inv_std[c];
          for (int n = 0; n < is.n; ++n) {
            const std::size_t base = (static_cast<std::size_t>(n) * channels + c) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
              if (train) {
                gx[base + i] += scale / mt *
                                (mt * gy[base + i] - sum_dy -
                                 xhat[base + i] * sum_dy_xhat);
              } else {
                gx[base + i] += scale * gy[base + i];
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> activation(Var<T> input, Activation kind) {
  const Tensor<T>& x = input.value();
  Tensor<T> out(x.shape());
  Tape<T>& tape = input.tape();
  switch (kind) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < T(0) ? T(0) : x[i];  // NaN propagates
      if (tape.track_kinks()) {
        for (std::size_t i = 0; i < x.size(); ++i) {
          tape.NoteKinkDistance(std::fabs(static_cast<double>(x[i])));
        }
      }
      break;
    case Activation::kGelu:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = Gelu(x[i]);
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = Sigmoid(x[i]);
      break;
  }
  const int xid = input.id();
  return tape.Record(std::move(out), {input}, [xid, kind](Tape<T>& t, int self) {
    const Tensor<T>& x = t.value(xid);
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(xid);
    for (std::size_t i = 0; i < x.size(); ++i) {
      T d;
      switch (kind) {
        case Activation::kRelu:
          d = x[i] > T(0) ? T(1) : T(0);
          break;
        case Activation::kGelu:
          d = GeluGrad(x[i]);
          break;
        default:
          d = y[i] * (T(1) - y[i]);
          break;
      }
      gx[i] += gy[i] * d;
    }
  });
}

template <typename T>
Var<T> pool2d(Var<T> input, PoolKind kind) {
  const Shape is = input.shape();
  if (is.h == 0 || is.w == 0) {
    throw ShapeError("pool2d", is.h == 0 ? "H" : "W",
                     "zero-sized spatial extent " + is.ToString());
  }
  const Shape os{is.n, is.c, (is.h + 1) / 2, (is.w + 1) / 2};
  Tensor<T> out(os);
  // For max pooling remember the winning flat index of each output.
  std::vector<std::size_t> argmax(kind == PoolKind::kMax ? os.numel() : 0);
  const T* x = input.value().data();
  Tape<T>& tape = input.tape();
  std::size_t o = 0;
  for (int nc = 0; nc < is.n * is.c; ++nc) {
    const std::size_t base = static_cast<std::size_t>(nc) * is.plane();
    for (int oy = 0; oy < os.h; ++oy) {
      for (int ox = 0; ox < os.w; ++ox, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        T second = -std::numeric_limits<T>::infinity();
        std::size_t best_i = 0;
        T acc = 0;
        int count = 0;
        for (int dy = 0; dy < 2; ++dy) {
          const int y = 2 * oy + dy;
          if (y >= is.h) continue;
          for (int dx = 0; dx < 2; ++dx) {
            const int xx = 2 * ox + dx;
            if (xx >= is.w) continue;
            const std::size_t idx = base + static_cast<std::size_t>(y) * is.w + xx;
            const T v = x[idx];
            if (v > best) {
              second = best;
              best = v;
              best_i = idx;
            } else if (v > second) {
              second = v;
            }
            acc += v;
            ++count;
          }
        }
        if (kind == PoolKind::kMax) {
          out[o] = best;
          argmax[o] = best_i;
          if (tape.track_kinks() && count > 1) {
            tape.NoteKinkDistance(static_cast<double>(best - second));
          }
        } else {
          out[o] = acc / static_cast<T>(count);
        }
      }
    }
  }
  const int xid = input.id();
  return tape.Record(
      std::move(out), {input},
      [xid, kind, argmax = std::move(argmax)](Tape<T>& t, int self) {
        const Tensor<T>& gy = t.grad(self);
        Tensor<T>& gx = t.grad(xid);
        if (kind == PoolKind::kMax) {
          for (std::size_t o = 0; o < gy.size(); ++o) gx[argmax[o]] += gy[o];
          return;
        }
        const Shape is = gx.shape();
        const Shape os = gy.shape();
        std::size_t o = 0;
        for (int nc = 0; nc < is.n * is.c; ++nc) {
          const std::size_t base = static_cast<std::size_t>(nc) * is.plane();
          for (int oy = 0; oy < os.h; ++oy) {
            for (int ox = 0; ox < os.w; ++ox, ++o) {
              const int ny = std::min(2, is.h - 2 * oy);
              const int nx = std::min(2, is.w - 2 * ox);
              const T g = gy[o] / static_cast<T>(ny * nx);
              for (int dy = 0; dy < ny; ++dy) {
                for (int dx = 0; dx < nx; ++dx) {
                  gx[base + static_cast<std::size_t>(2 * oy + dy) * is.w + 2 * ox + dx] += g;
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> global_avg_pool(Var<T> input) {
  const Shape is = input.shape();
  if (is.h < 1 || is.w < 1) {
    throw ShapeError("global_avg_pool", is.h < 1 ? "H" : "W",
                     "empty spatial extent " + is.ToString());
  }
  Tensor<T> out(Shape{is.n, is.c, 1, 1});
  const std::size_t hw = is.plane();
  for (int nc = 0; nc < is.n * is.c; ++nc) {
    const T* p = input.value().data() + static_cast<std::size_t>(nc) * hw;
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += p[i];
    out[nc] = acc / static_cast<T>(hw);
  }
  const int xid = input.id();
  return input.tape().Record(std::move(out), {input}, [xid](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(xid);
    const std::size_t hw = gx.shape().plane();
    for (std::size_t nc = 0; nc < gy.size(); ++nc) {
      const T g = gy[nc] / static_cast<T>(hw);
      T* p = gx.data() + nc * hw;
      for (std::size_t i = 0; i < hw; ++i) p[i] += g;
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  const Shape as = a.shape(), bs = b.shape();
  if (!(as == bs)) {
    const char* dim = as.n != bs.n ? "N" : as.c != bs.c ? "C" : as.h != bs.h ? "H" : "W";
    throw ShapeError("add", dim, as.ToString() + " vs " + bs.ToString());
  }
  Tensor<T> out(as);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const int aid = a.id(), bid = b.id();
  return a.tape().Record(std::move(out), {a, b}, [aid, bid](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    if (t.requires_grad(aid)) AddInto(t.grad(aid), gy);
    if (t.requires_grad(bid)) AddInto(t.grad(bid), gy);
  });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const Shape as = a.shape(), bs = b.shape();
  Require(as.n == bs.n, "concat_channels", "N", as.ToString() + " vs " + bs.ToString());
  Require(as.h == bs.h, "concat_channels", "H", as.ToString() + " vs " + bs.ToString());
  Require(as.w == bs.w, "concat_channels", "W", as.ToString() + " vs " + bs.ToString());
  const Shape os{as.n, as.c + bs.c, as.h, as.w};
  Tensor<T> out(os);
  const std::size_t na = static_cast<std::size_t>(as.c) * as.plane();
  const std::size_t nb = static_cast<std::size_t>(bs.c) * bs.plane();
  for (int n = 0; n < as.n; ++n) {
    std::copy_n(a.value().data() + n * na, na, out.data() + n * (na + nb));
    std::copy_n(b.value().data() + n * nb, nb, out.data() + n * (na + nb) + na);
  }
  const int aid = a.id(), bid = b.id();
  return a.tape().Record(std::move(out), {a, b}, [aid, bid, na, nb](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    const int n_batch = gy.shape().n;
    for (int n = 0; n < n_batch; ++n) {
      const T* src = gy.data() + n * (na + nb);
      if (t.requires_grad(aid)) {
        T* d = t.grad(aid).data() + n * na;
        for (std::size_t i = 0; i < na; ++i) d[i] += src[i];
      }
      if (t.requires_grad(bid)) {
        T* d = t.grad(bid).data() + n * nb;
        for (std::size_t i = 0; i < nb; ++i) d[i] += src[na + i];
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> input, int begin, int count) {
  const Shape is = input.shape();
  Require(begin >= 0 && count >= 0 && begin + count <= is.c, "slice_channels", "C",
          "range [" + Dim(begin) + "," + Dim(begin + count) + ") outside C=" + Dim(is.c));
  const Shape os{is.n, count, is.h, is.w};
  Tensor<T> out(os);
  const std::size_t hw = is.plane();
  for (int n = 0; n < is.n; ++n) {
    std::copy_n(input.value().data() + (static_cast<std::size_t>(n) * is.c + begin) * hw,
                count * hw, out.data() + static_cast<std::size_t>(n) * count * hw);
  }
  const int xid = input.id();
  return input.tape().Record(std::move(out), {input}, [xid, begin](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(xid);
    const Shape is = gx.shape();
    const int count = gy.shape().c;
    const std::size_t hw = is.plane();
    for (int n = 0; n < is.n; ++n) {
      const T* s = gy.data() + static_cast<std::size_t>(n) * count * hw;
      T* d = gx.data() + (static_cast<std::size_t>(n) * is.c + begin) * hw;
      for (std::size_t i = 0; i < count * hw; ++i) d[i] += s[i];
    }
  });
}

template <typename T>
Var<T> bias_add(Var<T> input, Var<T> bias) {
  const Shape is = input.shape();
  Require(bias.value().size() == static_cast<std::size_t>(is.c), "bias_add", "C",
          "bias length " + Dim(static_cast<int>(bias.value().size())) + " vs C=" + Dim(is.c));
  Tensor<T> out(is);
  const std::size_t hw = is.plane();
  for (int n = 0; n < is.n; ++n) {
    for (int c = 0; c < is.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * is.c + c) * hw;
      const T b = bias.value()[c];
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = input.value()[base + i] + b;
    }
  }
  const int xid = input.id(), bid = bias.id();
  return input.tape().Record(std::move(out), {input, bias}, [xid, bid](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    const Shape os = gy.shape();
    const std::size_t hw = os.plane();
    if (t.requires_grad(xid)) AddInto(t.grad(xid), gy);
    if (!t.requires_grad(bid)) return;
    Tensor<T>& gb = t.grad(bid);
    for (int n = 0; n < os.n; ++n) {
      for (int c = 0; c < os.c; ++c) {
        const T* p = gy.data() + (static_cast<std::size_t>(n) * os.c + c) * hw;
        T acc = 0;
        for (std::size_t i = 0; i < hw; ++i) acc += p[i];
        gb[c] += acc;
      }
    }
  });
}

template <typename T>
Var<T> mul_broadcast(Var<T> a, Var<T> b) {
  const Shape as = a.shape(), bs = b.shape();
  Require(bs.n == as.n, "mul_broadcast", "N", as.ToString() + " vs " + bs.ToString());
  Require(bs.c == as.c, "mul_broadcast", "C", as.ToString() + " vs " + bs.ToString());
  Require(bs.h == 1 && bs.w == 1, "mul_broadcast", "H",
          "scale must be (N,C,1,1), got " + bs.ToString());
  Tensor<T> out(as);
  const std::size_t hw = as.plane();
  for (std::size_t nc = 0; nc < bs.numel(); ++nc) {
    const T s = b.value()[nc];
    for (std::size_t i = 0; i < hw; ++i) out[nc * hw + i] = a.value()[nc * hw + i] * s;
  }
  const int aid = a.id(), bid = b.id();
  return a.tape().Record(std::move(out), {a, b}, [aid, bid](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& av = t.value(aid);
    const Tensor<T>& bv = t.value(bid);
    const std::size_t hw = av.shape().plane();
    const bool need_a = t.requires_grad(aid);
    const bool need_b = t.requires_grad(bid);
    for (std::size_t nc = 0; nc < bv.size(); ++nc) {
      T acc = 0;
      for (std::size_t i = 0; i < hw; ++i) {
        acc += gy[nc * hw + i] * av[nc * hw + i];
        if (need_a) t.grad(aid)[nc * hw + i] += gy[nc * hw + i] * bv[nc];
      }
      if (need_b) t.grad(bid)[nc] += acc;
    }
  });
}

template <typename T>
Var<T> upsample_nearest(Var<T> input, int factor, int out_h, int out_w) {
  if (factor < 1) {
    throw InvalidArgument("upsample_nearest: factor must be >= 1, got " + Dim(factor));
  }
  const Shape is = input.shape();
  const int oh = out_h >= 0 ? out_h : is.h * factor;
  const int ow = out_w >= 0 ? out_w : is.w * factor;
  Require(oh <= is.h * factor, "upsample_nearest", "H", "crop larger than upsampled size");
  Require(ow <= is.w * factor, "upsample_nearest", "W", "crop larger than upsampled size");
  const Shape os{is.n, is.c, oh, ow};
  Tensor<T> out(os);
  for (int nc = 0; nc < is.n * is.c; ++nc) {
    const T* src = input.value().data() + static_cast<std::size_t>(nc) * is.plane();
    T* dst = out.data() + static_cast<std::size_t>(nc) * os.plane();
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) dst[y * ow + x] = src[(y / factor) * is.w + x / factor];
    }
  }
  const int xid = input.id();
  return input.tape().Record(std::move(out), {input}, [xid, factor](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(xid);
    const Shape is = gx.shape(), os = gy.shape();
    for (int nc = 0; nc < is.n * is.c; ++nc) {
      const T* src = gy.data() + static_cast<std::size_t>(nc) * os.plane();
      T* dst = gx.data() + static_cast<std::size_t>(nc) * is.plane();
      for (int y = 0; y < os.h; ++y) {
        for (int x = 0; x < os.w; ++x) dst[(y / factor) * is.w + x / factor] += src[y * os.w + x];
      }
    }
  });
}

template <typename T>
Var<T> dropout(Var<T> input, double rate, bool train, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw InvalidArgument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!train || rate == 0.0) return input;
  const Tensor<T>& x = input.value();
  Tensor<T> mask(x.shape());
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.Uniform() < rate ? T(0) : keep_scale;
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  const int xid = input.id();
  return input.tape().Record(std::move(out), {input},
                             [xid, mask = std::move(mask)](Tape<T>& t, int self) {
                               const Tensor<T>& gy = t.grad(self);
                               Tensor<T>& gx = t.grad(xid);
                               for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * mask[i];
                             });
}

template <typename T>
Var<T> sum(Var<T> input) {
  T acc = 0;
  for (T v : input.value().vec()) acc += v;
  const int xid = input.id();
  return input.tape().Record(Tensor<T>(Shape{1, 1, 1, 1}, acc), {input},
                             [xid](Tape<T>& t, int self) {
                               const T g = t.grad(self)[0];
                               for (T& v : t.grad(xid).vec()) v += g;
                             });
}

template <typename T>
Var<T> weighted_sum(Var<T> input, const Tensor<T>& weights) {
  if (weights.size() != input.value().size()) {
    throw ShapeError("weighted_sum", "numel",
                     input.shape().ToString() + " vs " + weights.shape().ToString());
  }
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += input.value()[i] * weights[i];
  const int xid = input.id();
  return input.tape().Record(Tensor<T>(Shape{1, 1, 1, 1}, acc), {input},
                             [xid, weights](Tape<T>& t, int self) {
                               const T g = t.grad(self)[0];
                               Tensor<T>& gx = t.grad(xid);
                               for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
                             });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("mul", "numel", a.shape().ToString() + " vs " + b.shape().ToString());
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const int aid = a.id(), bid = b.id();
  return a.tape().Record(std::move(out), {a, b}, [aid, bid](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    const Tensor<T>& av = t.value(aid);
    const Tensor<T>& bv = t.value(bid);
    if (t.requires_grad(aid)) {
      Tensor<T>& ga = t.grad(aid);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (t.requires_grad(bid)) {
      Tensor<T>& gb = t.grad(bid);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> input, T factor) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input.value()[i] * factor;
  const int xid = input.id();
  return input.tape().Record(std::move(out), {input}, [xid, factor](Tape<T>& t, int self) {
    const Tensor<T>& gy = t.grad(self);
    Tensor<T>& gx = t.grad(xid);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * factor;
  });
}

#define LPNAS_INSTANTIATE_OPS(T)                                                   \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>);                   \
  template Var<T> depthwise_conv2d(Var<T>, Var<T>);                                \
  template Var<T> batchnorm2d(Var<T>, Var<T>, Var<T>, RunningStats<T>&,            \
                              const BatchNormOptions&);                            \
  template Var<T> activation(Var<T>, Activation);                                  \
  template Var<T> pool2d(Var<T>, PoolKind);                                        \
  template Var<T> global_avg_pool(Var<T>);                                         \
  template Var<T> add(Var<T>, Var<T>);                                             \
  template Var<T> concat_channels(Var<T>, Var<T>);                                 \
  template Var<T> slice_channels(Var<T>, int, int);                                \
  template Var<T> bias_add(Var<T>, Var<T>);                                        \
  template Var<T> mul_broadcast(Var<T>, Var<T>);                                   \
  template Var<T> upsample_nearest(Var<T>, int, int, int);                         \
  template Var<T> dropout(Var<T>, double, bool, Rng&);                             \
  template Var<T> sum(Var<T>);                                                     \
  template Var<T> weighted_sum(Var<T>, const Tensor<T>&);                          \
  template Var<T> mul(Var<T>, Var<T>);                                             \
  template Var<T> scale(Var<T>, T);

LPNAS_INSTANTIATE_OPS(float)
LPNAS_INSTANTIATE_OPS(double)

#undef LPNAS_INSTANTIATE_OPS

}  // namespace lpnas
