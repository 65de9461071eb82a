#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "sirst/errors.hpp"
#include "sirst/tape.hpp"

namespace sirst {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_rank3(const Tensor& t, const char* op) {
  if (t.rank() != 3)
    throw InvalidShapeError(std::string(op) + " expects a (C,H,W) tensor, got " + shape_str(t.shape()));
}

struct ConvGeom {
  int c, h, w, o, k, stride, pad, ho, wo;
  int rows() const { return c * k * k; }
  int cols() const { return ho * wo; }
};

void im2col(const double* in, const ConvGeom& g, double* col) {
  for (int ci = 0; ci < g.c; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        double* row = col + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = in + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvGeom& g, double* in) {
  for (int ci = 0; ci < g.c; ++ci) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const double* row = col + static_cast<std::size_t>((ci * g.k + ky) * g.k + kx) * g.cols();
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.wo;
          double* dst = in + (static_cast<std::size_t>(ci) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Pointwise convolutions skip the im2col copy entirely.
bool is_pointwise(const ConvGeom& g) { return g.k == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

Var conv2d(Tape& tape, Var input, Var weight, Var bias, int stride, int padding) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(weight);
  require_rank3(x, "conv2d");
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw InvalidShapeError("conv2d weight must be (O,C,K,K), got " + shape_str(w.shape()));
  if (w.dim(1) != x.channels())
    throw InvalidShapeError("conv2d input has " + std::to_string(x.channels()) +
                            " channels but weight expects " + std::to_string(w.dim(1)));
  if (stride < 1 || padding < 0) throw InvalidShapeError("conv2d stride must be >= 1, padding >= 0");
  ConvGeom g{x.channels(), x.height(), x.width(), w.dim(0), w.dim(2), stride, padding, 0, 0};
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k || g.ho <= 0 || g.wo <= 0)
    throw InvalidShapeError("conv2d kernel larger than padded input");
  if (bias.valid()) {
    const Tensor& b = tape.value(bias);
    if (b.size() != static_cast<std::size_t>(g.o))
      throw InvalidShapeError("conv2d bias length must equal output channels");
  }

  Tensor out({g.o, g.ho, g.wo});
  ConstMapMat wm(w.data().data(), g.o, g.rows());
  MapMat om(out.data().data(), g.o, g.cols());
  if (is_pointwise(g)) {
    om.noalias() = wm * ConstMapMat(x.data().data(), g.rows(), g.cols());
  } else {
    Buffer col(static_cast<std::size_t>(g.rows()) * g.cols());
    im2col(x.data().data(), g, col.data());
    om.noalias() = wm * ConstMapMat(col.data(), g.rows(), g.cols());
  }
  if (bias.valid()) {
    const Tensor& b = tape.value(bias);
    for (int oc = 0; oc < g.o; ++oc) om.row(oc).array() += b[static_cast<std::size_t>(oc)];
  }

  std::vector<int> parents{input.id, weight.id};
  if (bias.valid()) parents.push_back(bias.id);
  return tape.record(std::move(out), std::move(parents), [g, input, weight, bias](Tape& t, int self) {
    ConstMapMat gout(t.node_grad(self).data(), g.o, g.cols());
    const Tensor& x = t.value(input);
    const bool need_x = t.requires_grad(input);
    const bool need_w = t.requires_grad(weight);
    Buffer col;
    const double* colp = x.data().data();
    if (need_w && !is_pointwise(g)) {
      col.resize(static_cast<std::size_t>(g.rows()) * g.cols());
      im2col(x.data().data(), g, col.data());
      colp = col.data();
    }
    if (need_w) {
      MapMat gw(t.accum(weight.id).data(), g.o, g.rows());
      gw.noalias() += gout * ConstMapMat(colp, g.rows(), g.cols()).transpose();
    }
    if (bias.valid() && t.requires_grad(bias)) {
      auto gb = t.accum(bias.id);
      for (int oc = 0; oc < g.o; ++oc) gb[static_cast<std::size_t>(oc)] += gout.row(oc).sum();
    }
    if (need_x) {
      ConstMapMat wm(t.value(weight).data().data(), g.o, g.rows());
      if (is_pointwise(g)) {
        MapMat gx(t.accum(input.id).data(), g.rows(), g.cols());
        gx.noalias() += wm.transpose() * gout;
      } else {
        RowMat gcol = wm.transpose() * gout;
        col2im_add(gcol.data(), g, t.accum(input.id).data());
      }
    }
  });
}

Var maxpool2(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_rank3(x, "maxpool2");
  const int c = x.channels(), h = x.height(), w = x.width();
  if (h % 2 || w % 2) throw InvalidShapeError("maxpool2 requires even extents, got " + shape_str(x.shape()));
  const int ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < ho; ++y) {
      for (int xo = 0; xo < wo; ++xo, ++o) {
        // Row-major scan, strict > keeps the first maximum on ties.
        std::size_t best = (static_cast<std::size_t>(ci) * h + 2 * y) * w + 2 * xo;
        const std::size_t cand[3] = {best + 1, best + static_cast<std::size_t>(w),
                                     best + static_cast<std::size_t>(w) + 1};
        for (std::size_t idx : cand)
          if (x[idx] > x[best]) best = idx;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  return tape.record(std::move(out), {input.id}, [input, argmax = std::move(argmax)](Tape& t, int self) {
    auto g = t.node_grad(self);
    auto gx = t.accum(input.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
  });
}

Var avgpool2(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_rank3(x, "avgpool2");
  const int c = x.channels(), h = x.height(), w = x.width();
  if (h % 2 || w % 2) throw InvalidShapeError("avgpool2 requires even extents, got " + shape_str(x.shape()));
  const int ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xo = 0; xo < wo; ++xo)
        out.at(ci, y, xo) = 0.25 * (x.at(ci, 2 * y, 2 * xo) + x.at(ci, 2 * y, 2 * xo + 1) +
                                    x.at(ci, 2 * y + 1, 2 * xo) + x.at(ci, 2 * y + 1, 2 * xo + 1));
  return tape.record(std::move(out), {input.id}, [input, c, ho, wo, w](Tape& t, int self) {
    auto g = t.node_grad(self);
    auto gx = t.accum(input.id);
    std::size_t o = 0;
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < ho; ++y)
        for (int xo = 0; xo < wo; ++xo, ++o) {
          const double v = 0.25 * g[o];
          const std::size_t base = (static_cast<std::size_t>(ci) * 2 * ho + 2 * y) * w + 2 * xo;
          gx[base] += v;
          gx[base + 1] += v;
          gx[base + static_cast<std::size_t>(w)] += v;
          gx[base + static_cast<std::size_t>(w) + 1] += v;
        }
  });
}

namespace {

struct Tap {
  int lo, hi;
  double frac;  // weight of hi
};

// Source taps for x2 bilinear upsampling along one axis.
std::vector<Tap> upsample_taps(int n) {
  std::vector<Tap> taps(static_cast<std::size_t>(2 * n));
  for (int i = 0; i < 2 * n; ++i) {
    double s = (i + 0.5) / 2.0 - 0.5;
    if (s < 0.0) s = 0.0;
    int lo = static_cast<int>(std::floor(s));
    if (lo > n - 1) lo = n - 1;
    const int hi = std::min(lo + 1, n - 1);
    taps[static_cast<std::size_t>(i)] = Tap{lo, hi, s - lo};
  }
  return taps;
}

}  // namespace

Var upsample2(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_rank3(x, "upsample2");
  const int c = x.channels(), h = x.height(), w = x.width();
  auto ty = upsample_taps(h);
  auto tx = upsample_taps(w);
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < 2 * h; ++oy) {
      const Tap& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < 2 * w; ++ox) {
        const Tap& b = tx[static_cast<std::size_t>(ox)];
        const double top = (1 - b.frac) * x.at(ci, a.lo, b.lo) + b.frac * x.at(ci, a.lo, b.hi);
        const double bot = (1 - b.frac) * x.at(ci, a.hi, b.lo) + b.frac * x.at(ci, a.hi, b.hi);
        out.at(ci, oy, ox) = (1 - a.frac) * top + a.frac * bot;
      }
    }
  }
  return tape.record(std::move(out), {input.id}, [input, c, h, w, ty, tx](Tape& t, int self) {
    auto g = t.node_grad(self);
    auto gx = t.accum(input.id);
    std::size_t o = 0;
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t plane = static_cast<std::size_t>(ci) * h * w;
      for (int oy = 0; oy < 2 * h; ++oy) {
        const Tap& a = ty[static_cast<std::size_t>(oy)];
        for (int ox = 0; ox < 2 * w; ++ox, ++o) {
          const Tap& b = tx[static_cast<std::size_t>(ox)];
          const double v = g[o];
          gx[plane + static_cast<std::size_t>(a.lo) * w + b.lo] += (1 - a.frac) * (1 - b.frac) * v;
          gx[plane + static_cast<std::size_t>(a.lo) * w + b.hi] += (1 - a.frac) * b.frac * v;
          gx[plane + static_cast<std::size_t>(a.hi) * w + b.lo] += a.frac * (1 - b.frac) * v;
          gx[plane + static_cast<std::size_t>(a.hi) * w + b.hi] += a.frac * b.frac * v;
        }
      }
    }
  });
}

Var concat(Tape& tape, std::span<const Var> inputs) {
  if (inputs.empty()) throw InvalidShapeError("concat of zero tensors");
  const Tensor& first = tape.value(inputs[0]);
  require_rank3(first, "concat");
  int total = 0;
  for (Var v : inputs) {
    const Tensor& t = tape.value(v);
    require_rank3(t, "concat");
    if (t.height() != first.height() || t.width() != first.width())
      throw InvalidShapeError("concat spatial mismatch: " + shape_str(first.shape()) + " vs " +
                              shape_str(t.shape()));
    total += t.channels();
  }
  Tensor out({total, first.height(), first.width()});
  std::vector<int> parents;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var v : inputs) {
    const Tensor& t = tape.value(v);
    std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    parents.push_back(v.id);
    offsets.push_back(off);
    off += t.size();
  }
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return tape.record(std::move(out), std::move(parents), [ins, offsets](Tape& t, int self) {
    auto g = t.node_grad(self);
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (!t.requires_grad(ins[k])) continue;
      auto gx = t.accum(ins[k].id);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[offsets[k] + i];
    }
  });
}

Var relu(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  Tensor out(x.shape());
  // NaN passes through so a poisoned input still surfaces as a bad loss.
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] > 0.0 || std::isnan(x[i])) ? x[i] : 0.0;
  return tape.record(std::move(out), {input.id}, [input](Tape& t, int self) {
    auto g = t.node_grad(self);
    const Tensor& x = t.value(input);
    auto gx = t.accum(input.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) gx[i] += g[i];
  });
}

Var sigmoid(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return tape.record(std::move(out), {input.id}, [input](Tape& t, int self) {
    auto g = t.node_grad(self);
    const Tensor& y = t.node_value(self);
    auto gx = t.accum(input.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var add(Tape& tape, Var a, Var b) {
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  if (!same_shape(x, y))
    throw InvalidShapeError("add shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  return tape.record(std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    auto g = t.node_grad(self);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      auto gx = t.accum(v.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
  });
}

Var mul(Tape& tape, Var a, Var b) {
  const Tensor& x = tape.value(a);
  const Tensor& y = tape.value(b);
  if (!same_shape(x, y))
    throw InvalidShapeError("mul shape mismatch: " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(std::move(out), {a.id, b.id}, [a, b](Tape& t, int self) {
    auto g = t.node_grad(self);
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (t.requires_grad(a)) {
      auto gx = t.accum(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
    }
    if (t.requires_grad(b)) {
      auto gy = t.accum(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gy[i] += g[i] * x[i];
    }
  });
}

Var sum(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  double s = 0.0;
  for (double v : x.data()) s += v;
  return tape.record(Tensor::scalar(s), {input.id}, [input](Tape& t, int self) {
    const double g = t.node_grad(self)[0];
    for (double& v : t.accum(input.id)) v += g;
  });
}

Var global_max_pool(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_rank3(x, "global_max_pool");
  const int c = x.channels();
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  Tensor out({c, 1, 1});
  std::vector<std::size_t> arg(static_cast<std::size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    std::size_t best = ci * plane;
    for (std::size_t i = best + 1; i < (ci + 1) * plane; ++i)
      if (x[i] > x[best]) best = i;
    arg[static_cast<std::size_t>(ci)] = best;
    out[static_cast<std::size_t>(ci)] = x[best];
  }
  return tape.record(std::move(out), {input.id}, [input, arg](Tape& t, int self) {
    auto g = t.node_grad(self);
    auto gx = t.accum(input.id);
    for (std::size_t ci = 0; ci < arg.size(); ++ci) gx[arg[ci]] += g[ci];
  });
}

Var global_avg_pool(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_rank3(x, "global_avg_pool");
  const int c = x.channels();
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  Tensor out({c, 1, 1});
  for (int ci = 0; ci < c; ++ci) {
    double s = 0.0;
    for (std::size_t i = ci * plane; i < (ci + 1) * plane; ++i) s += x[i];
    out[static_cast<std::size_t>(ci)] = s / static_cast<double>(plane);
  }
  return tape.record(std::move(out), {input.id}, [input, c, plane](Tape& t, int self) {
    auto g = t.node_grad(self);
    auto gx = t.accum(input.id);
    for (int ci = 0; ci < c; ++ci) {
      const double v = g[static_cast<std::size_t>(ci)] / static_cast<double>(plane);
      for (std::size_t i = ci * plane; i < (ci + 1) * plane; ++i) gx[i] += v;
    }
  });
}

Var channel_max(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_rank3(x, "channel_max");
  const int c = x.channels();
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  Tensor out({1, x.height(), x.width()});
  std::vector<std::size_t> arg(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t best = p;
    for (int ci = 1; ci < c; ++ci) {
      const std::size_t idx = ci * plane + p;
      if (x[idx] > x[best]) best = idx;
    }
    arg[p] = best;
    out[p] = x[best];
  }
  return tape.record(std::move(out), {input.id}, [input, arg](Tape& t, int self) {
    auto g = t.node_grad(self);
    auto gx = t.accum(input.id);
    for (std::size_t p = 0; p < arg.size(); ++p) gx[arg[p]] += g[p];
  });
}

Var channel_avg(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_rank3(x, "channel_avg");
  const int c = x.channels();
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  Tensor out({1, x.height(), x.width()});
  for (int ci = 0; ci < c; ++ci)
    for (std::size_t p = 0; p < plane; ++p) out[p] += x[ci * plane + p];
  for (std::size_t p = 0; p < plane; ++p) out[p] /= c;
  return tape.record(std::move(out), {input.id}, [input, c, plane](Tape& t, int self) {
    auto g = t.node_grad(self);
    auto gx = t.accum(input.id);
    for (int ci = 0; ci < c; ++ci)
      for (std::size_t p = 0; p < plane; ++p) gx[ci * plane + p] += g[p] / c;
  });
}

Var scale_channels(Tape& tape, Var features, Var attention) {
  const Tensor& x = tape.value(features);
  const Tensor& m = tape.value(attention);
  require_rank3(x, "scale_channels");
  if (m.rank() != 3 || m.channels() != x.channels() || m.height() != 1 || m.width() != 1)
    throw InvalidShapeError("channel attention must be (C,1,1) matching " + shape_str(x.shape()));
  const int c = x.channels();
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  Tensor out(x.shape());
  for (int ci = 0; ci < c; ++ci)
    for (std::size_t p = 0; p < plane; ++p)
      out[ci * plane + p] = m[static_cast<std::size_t>(ci)] * x[ci * plane + p];
  return tape.record(std::move(out), {features.id, attention.id},
                     [features, attention, c, plane](Tape& t, int self) {
                       auto g = t.node_grad(self);
                       const Tensor& x = t.value(features);
                       const Tensor& m = t.value(attention);
                       if (t.requires_grad(features)) {
                         auto gx = t.accum(features.id);
                         for (int ci = 0; ci < c; ++ci)
                           for (std::size_t p = 0; p < plane; ++p)
                             gx[ci * plane + p] += g[ci * plane + p] * m[static_cast<std::size_t>(ci)];
                       }
                       if (t.requires_grad(attention)) {
                         auto gm = t.accum(attention.id);
                         for (int ci = 0; ci < c; ++ci) {
                           double s = 0.0;
                           for (std::size_t p = 0; p < plane; ++p) s += g[ci * plane + p] * x[ci * plane + p];
                           gm[static_cast<std::size_t>(ci)] += s;
                         }
                       }
                     });
}

Var scale_spatial(Tape& tape, Var features, Var attention) {
  const Tensor& x = tape.value(features);
  const Tensor& m = tape.value(attention);
  require_rank3(x, "scale_spatial");
  if (m.rank() != 3 || m.channels() != 1 || m.height() != x.height() || m.width() != x.width())
    throw InvalidShapeError("spatial attention must be (1,H,W) matching " + shape_str(x.shape()));
  const int c = x.channels();
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  Tensor out(x.shape());
  for (int ci = 0; ci < c; ++ci)
    for (std::size_t p = 0; p < plane; ++p) out[ci * plane + p] = m[p] * x[ci * plane + p];
  return tape.record(std::move(out), {features.id, attention.id},
                     [features, attention, c, plane](Tape& t, int self) {
                       auto g = t.node_grad(self);
                       const Tensor& x = t.value(features);
                       const Tensor& m = t.value(attention);
                       if (t.requires_grad(features)) {
                         auto gx = t.accum(features.id);
                         for (int ci = 0; ci < c; ++ci)
                           for (std::size_t p = 0; p < plane; ++p) gx[ci * plane + p] += g[ci * plane + p] * m[p];
                       }
                       if (t.requires_grad(attention)) {
                         auto gm = t.accum(attention.id);
                         for (int ci = 0; ci < c; ++ci)
                           for (std::size_t p = 0; p < plane; ++p) gm[p] += g[ci * plane + p] * x[ci * plane + p];
                       }
                     });
}

Var matvec(Tape& tape, Var weight, Var x) {
  const Tensor& w = tape.value(weight);
  const Tensor& v = tape.value(x);
  if (w.rank() != 2 || static_cast<std::size_t>(w.dim(1)) != v.size())
    throw InvalidShapeError("matvec weight " + shape_str(w.shape()) + " incompatible with " +
                            shape_str(v.shape()));
  const int m = w.dim(0), n = w.dim(1);
  Tensor out({m, 1, 1});
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += w[static_cast<std::size_t>(i) * n + j] * v[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] = s;
  }
  return tape.record(std::move(out), {weight.id, x.id}, [weight, x, m, n](Tape& t, int self) {
    auto g = t.node_grad(self);
    const Tensor& w = t.value(weight);
    const Tensor& v = t.value(x);
    if (t.requires_grad(weight)) {
      auto gw = t.accum(weight.id);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gw[static_cast<std::size_t>(i) * n + j] += g[static_cast<std::size_t>(i)] * v[static_cast<std::size_t>(j)];
    }
    if (t.requires_grad(x)) {
      auto gv = t.accum(x.id);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
          gv[static_cast<std::size_t>(j)] += g[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i) * n + j];
    }
  });
}

Var mlp_shared(Tape& tape, Var x, Var w1, Var w2) {
  const Tensor& a = tape.value(w1);
  const Tensor& b = tape.value(w2);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(1) || a.dim(1) != b.dim(0))
    throw InvalidShapeError("mlp weights " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                            " do not form a C -> C/r -> C network");
  return matvec(tape, w2, relu(tape, matvec(tape, w1, x)));
}

Var soft_iou_loss(Tape& tape, Var pred, Var mask) {
  const Tensor& p = tape.value(pred);
  const Tensor& y = tape.value(mask);
  if (!same_shape(p, y))
    throw InvalidShapeError("soft_iou_loss shape mismatch: " + shape_str(p.shape()) + " vs " +
                            shape_str(y.shape()));
  double inter = 0.0, ps = 0.0, ys = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * y[i];
    ps += p[i];
    ys += y[i];
  }
  const double num = inter + kSoftIouEps;
  const double den = ps + ys - inter + kSoftIouEps;
  return tape.record(Tensor::scalar(1.0 - num / den), {pred.id, mask.id},
                     [pred, mask, num, den](Tape& t, int self) {
                       const double g = t.node_grad(self)[0];
                       const Tensor& y = t.value(mask);
                       const Tensor& p = t.value(pred);
                       const double d2 = den * den;
                       if (t.requires_grad(pred)) {
                         auto gp = t.accum(pred.id);
                         for (std::size_t i = 0; i < gp.size(); ++i)
                           gp[i] += -g * (y[i] * den - num * (1.0 - y[i])) / d2;
                       }
                       if (t.requires_grad(mask)) {
                         auto gy = t.accum(mask.id);
                         for (std::size_t i = 0; i < gy.size(); ++i)
                           gy[i] += -g * (p[i] * den - num * (1.0 - p[i])) / d2;
                       }
                     });
}

Var instance_norm(Tape& tape, Var input, Var gamma, Var beta) {
  const Tensor& x = tape.value(input);
  require_rank3(x, "instance_norm");
  const int c = x.channels();
  if (tape.value(gamma).size() != static_cast<std::size_t>(c) || tape.value(beta).size() != static_cast<std::size_t>(c))
    throw InvalidShapeError("instance_norm affine terms must have " + std::to_string(c) + " entries");
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  const Tensor& g = tape.value(gamma);
  const Tensor& b = tape.value(beta);
  // Normalised activations and per-channel 1/sigma are kept for backward.
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<std::size_t>(c));
  Tensor out(x.shape());
  for (int ci = 0; ci < c; ++ci) {
    const std::size_t off = ci * plane;
    double mu = 0.0;
    for (std::size_t p = 0; p < plane; ++p) mu += x[off + p];
    mu /= static_cast<double>(plane);
    double var = 0.0;
    for (std::size_t p = 0; p < plane; ++p) var += (x[off + p] - mu) * (x[off + p] - mu);
    var /= static_cast<double>(plane);
    const double is = 1.0 / std::sqrt(var + kNormEps);
    (*inv_sigma)[static_cast<std::size_t>(ci)] = is;
    for (std::size_t p = 0; p < plane; ++p) {
      const double h = (x[off + p] - mu) * is;
      (*xhat)[off + p] = h;
      out[off + p] = g[static_cast<std::size_t>(ci)] * h + b[static_cast<std::size_t>(ci)];
    }
  }
  return tape.record(std::move(out), {input.id, gamma.id, beta.id},
                     [input, gamma, beta, c, plane, xhat, inv_sigma](Tape& t, int self) {
                       auto gy = t.node_grad(self);
                       const Tensor& gam = t.value(gamma);
                       const auto& h = *xhat;
                       const double n = static_cast<double>(plane);
                       for (int ci = 0; ci < c; ++ci) {
                         const std::size_t off = ci * plane;
                         double sum_g = 0.0, sum_gh = 0.0;
                         for (std::size_t p = 0; p < plane; ++p) {
                           sum_g += gy[off + p];
                           sum_gh += gy[off + p] * h[off + p];
                         }
                         if (t.requires_grad(gamma)) t.accum(gamma.id)[static_cast<std::size_t>(ci)] += sum_gh;
                         if (t.requires_grad(beta)) t.accum(beta.id)[static_cast<std::size_t>(ci)] += sum_g;
                         if (t.requires_grad(input)) {
                           auto gx = t.accum(input.id);
                           const double k = gam[static_cast<std::size_t>(ci)] * (*inv_sigma)[static_cast<std::size_t>(ci)];
                           for (std::size_t p = 0; p < plane; ++p)
                             gx[off + p] += k * (gy[off + p] - sum_g / n - h[off + p] * sum_gh / n);
                         }
                       }
                     });
}

}  // namespace sirst
