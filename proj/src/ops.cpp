// Copyright 2026 The segdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "segdiff/ops.hpp"

#include <cmath>

namespace segdiff {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must be rank " + std::to_string(rank) +
                         (t.defined() ? ", got " + shape_string(t.shape()) : std::string()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

struct ConvGeometry {
  Index cin, h, w, kh, kw, stride, pad, hout, wout;
  Index k() const { return cin * kh * kw; }
  Index n() const { return hout * wout; }
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

// cols[(c*kh + ky)*kw + kx][oy*wout + ox] = x[c][oy*s - p + ky][ox*s - p + kx]
void im2col(const double* x, const ConvGeometry& g, RowMatrix& cols) {
  cols.resize(g.k(), g.n());
  for (Index c = 0; c < g.cin; ++c) {
    const double* xc = x + c * g.h * g.w;
    for (Index ky = 0; ky < g.kh; ++ky) {
      for (Index kx = 0; kx < g.kw; ++kx) {
        double* row = cols.data() + ((c * g.kh + ky) * g.kw + kx) * g.n();
        for (Index oy = 0; oy < g.hout; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          double* dst = row + oy * g.wout;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wout, 0.0);
            continue;
          }
          const double* src = xc + iy * g.w;
          for (Index ox = 0; ox < g.wout; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const RowMatrix& cols, const ConvGeometry& g, double* dx) {
  for (Index c = 0; c < g.cin; ++c) {
    double* xc = dx + c * g.h * g.w;
    for (Index ky = 0; ky < g.kh; ++ky) {
      for (Index kx = 0; kx < g.kw; ++kx) {
        const double* row = cols.data() + ((c * g.kh + ky) * g.kw + kx) * g.n();
        for (Index oy = 0; oy < g.hout; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + oy * g.wout;
          double* dst = xc + iy * g.w;
          for (Index ox = 0; ox < g.wout; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  if (stride < 1 || padding < 0) {
    throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  }
  const Index batch = x.dim(0), cout = weight.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), weight.dim(3), stride, padding, 0, 0};
  if (weight.dim(1) != g.cin) {
    throw DimensionError("conv2d: input has " + std::to_string(g.cin) +
                         " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw DimensionError("conv2d: kernel extents must be odd");
  if (!bias.defined() || bias.rank() != 1 || bias.dim(0) != cout) {
    throw DimensionError("conv2d: bias must have shape [" + std::to_string(cout) + "]");
  }
  g.hout = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
  g.wout = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
  if (g.h + 2 * g.pad < g.kh || g.w + 2 * g.pad < g.kw) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }

  Tensor out({batch, cout, g.hout, g.wout});
  ConstMatrixMap wmat(weight.data(), cout, g.k());
  const Index in_stride = g.cin * g.h * g.w, out_stride = cout * g.n();
  RowMatrix cols;
  for (Index b = 0; b < batch; ++b) {
    MatrixMap ob(out.data() + b * out_stride, cout, g.n());
    if (g.pointwise()) {
      ob.noalias() = wmat * ConstMatrixMap(x.data() + b * in_stride, g.cin, g.n());
    } else {
      im2col(x.data() + b * in_stride, g, cols);
      ob.noalias() = wmat * cols;
    }
    ob.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.data(), cout);
  }

  detail::record(out, "conv2d", {x, weight, bias}, [x, weight, bias, g, batch, cout](const Array& go) {
    Array* gx = detail::grad_sink(x);
    Array* gw = detail::grad_sink(weight);
    Array* gb = detail::grad_sink(bias);
    ConstMatrixMap wmat(weight.data(), cout, g.k());
    const Index in_stride = g.cin * g.h * g.w, out_stride = cout * g.n();
    RowMatrix cols, dcols;
    for (Index b = 0; b < batch; ++b) {
      ConstMatrixMap gob(go.data() + b * out_stride, cout, g.n());
      if (gb) Eigen::Map<Eigen::VectorXd>(gb->data(), cout) += gob.rowwise().sum();
      if (gw) {
        MatrixMap gwm(gw->data(), cout, g.k());
        if (g.pointwise()) {
          gwm.noalias() += gob * ConstMatrixMap(x.data() + b * in_stride, g.cin, g.n()).transpose();
        } else {
          im2col(x.data() + b * in_stride, g, cols);
          gwm.noalias() += gob * cols.transpose();
        }
      }
      if (gx) {
        if (g.pointwise()) {
          MatrixMap(gx->data() + b * in_stride, g.cin, g.n()).noalias() += wmat.transpose() * gob;
        } else {
          dcols.noalias() = wmat.transpose() * gob;
          col2im_add(dcols, g, gx->data() + b * in_stride);
        }
      }
    }
  });
  return out;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  require_rank(x, 4, "group_norm", "input");
  const Index batch = x.dim(0), channels = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (groups < 1 || channels % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(channels) +
                      " channels not divisible into " + std::to_string(groups) + " groups");
  }
  if (eps <= 0) throw ConfigError("group_norm: eps must be positive");
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw DimensionError("group_norm: gamma/beta must have " + std::to_string(channels) +
                         " entries");
  }
  const Index per_group = channels / groups, m = per_group * hw;

  Tensor out(x.shape());
  auto xhat = std::make_shared<Array>(x.numel());
  auto rstd = std::make_shared<Array>(batch * groups);
  for (Index b = 0; b < batch; ++b) {
    for (Index g = 0; g < groups; ++g) {
      const Index off = (b * channels + g * per_group) * hw;
      auto seg = x.values().segment(off, m);
      const double mu = seg.mean();
      const double var = (seg - mu).square().mean();
      const double r = 1.0 / std::sqrt(var + eps);
      (*rstd)[b * groups + g] = r;
      xhat->segment(off, m) = (seg - mu) * r;
      for (Index c = g * per_group; c < (g + 1) * per_group; ++c) {
        const Index co = (b * channels + c) * hw;
        out.values().segment(co, hw) = xhat->segment(co, hw) * gamma.values()[c] + beta.values()[c];
      }
    }
  }

  detail::record(out, "group_norm", {x, gamma, beta},
                 [x, gamma, beta, xhat, rstd, batch, channels, hw, groups, per_group, m](const Array& go) {
    Array* gx = detail::grad_sink(x);
    Array* gg = detail::grad_sink(gamma);
    Array* gbeta = detail::grad_sink(beta);
    Array dxhat(m);
    for (Index b = 0; b < batch; ++b) {
      for (Index g = 0; g < groups; ++g) {
        const Index off = (b * channels + g * per_group) * hw;
        for (Index j = 0; j < per_group; ++j) {
          const Index c = g * per_group + j, co = (b * channels + c) * hw;
          auto gseg = go.segment(co, hw);
          if (gg) (*gg)[c] += (gseg * xhat->segment(co, hw)).sum();
          if (gbeta) (*gbeta)[c] += gseg.sum();
          dxhat.segment(j * hw, hw) = gseg * gamma.values()[c];
        }
        if (gx) {
          auto xh = xhat->segment(off, m);
          const double mean_d = dxhat.mean();
          const double mean_dx = (dxhat * xh).mean();
          gx->segment(off, m) += (*rstd)[b * groups + g] * (dxhat - mean_d - xh * mean_dx);
        }
      }
    }
  });
  return out;
}

Tensor attention(const Tensor& x, int heads, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                 const Tensor& wo) {
  require_rank(x, 4, "attention", "input");
  const Index batch = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
  if (heads < 1 || c % heads != 0) {
    throw ConfigError("attention: " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(heads) + " heads");
  }
  for (const Tensor* w : {&wq, &wk, &wv, &wo}) {
    if (w->numel() != c * c) throw DimensionError("attention: projections must be C x C");
  }
  const Index d = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const bool keep = grad_enabled() && (x.requires_grad() || wq.requires_grad() ||
                                        wk.requires_grad() || wv.requires_grad() ||
                                        wo.requires_grad());

  Tensor out(x.shape());
  // Saved per batch: Q, K, V, O (each C x N) and softmax weights (heads x N x N).
  struct Saved {
    RowMatrix q, k, v, o;
    std::vector<RowMatrix> p;
  };
  auto saved = std::make_shared<std::vector<Saved>>(keep ? batch : 0);
  ConstMatrixMap mq(wq.data(), c, c), mk(wk.data(), c, c), mv(wv.data(), c, c), mo(wo.data(), c, c);
  Saved scratch;
  for (Index b = 0; b < batch; ++b) {
    Saved& s = keep ? (*saved)[b] : scratch;
    ConstMatrixMap xb(x.data() + b * c * n, c, n);
    s.q.noalias() = mq * xb;
    s.k.noalias() = mk * xb;
    s.v.noalias() = mv * xb;
    s.o.resize(c, n);
    s.p.resize(heads);
    for (Index h = 0; h < heads; ++h) {
      RowMatrix& p = s.p[h];
      p.noalias() = s.q.middleRows(h * d, d).transpose() * s.k.middleRows(h * d, d);
      p *= scale;
      for (Index i = 0; i < n; ++i) {
        auto row = p.row(i).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      s.o.middleRows(h * d, d).noalias() = s.v.middleRows(h * d, d) * p.transpose();
    }
    MatrixMap ob(out.data() + b * c * n, c, n);
    ob = xb;
    ob.noalias() += mo * s.o;
  }

  detail::record(out, "attention", {x, wq, wk, wv, wo},
                 [x, wq, wk, wv, wo, saved, batch, c, n, d, heads, scale](const Array& go) {
    Array* gx = detail::grad_sink(x);
    Array* gq = detail::grad_sink(wq);
    Array* gk = detail::grad_sink(wk);
    Array* gv = detail::grad_sink(wv);
    Array* gwo = detail::grad_sink(wo);
    ConstMatrixMap mq(wq.data(), c, c), mk(wk.data(), c, c), mv(wv.data(), c, c),
        mo(wo.data(), c, c);
    RowMatrix d_o, dq(c, n), dk(c, n), dv(c, n), dp, ds;
    for (Index b = 0; b < batch; ++b) {
      const auto& s = (*saved)[b];
      ConstMatrixMap xb(x.data() + b * c * n, c, n);
      ConstMatrixMap gob(go.data() + b * c * n, c, n);
      if (gwo) MatrixMap(gwo->data(), c, c).noalias() += gob * s.o.transpose();
      d_o.noalias() = mo.transpose() * gob;
      for (Index h = 0; h < heads; ++h) {
        const RowMatrix& p = s.p[h];
        auto doh = d_o.middleRows(h * d, d);
        dv.middleRows(h * d, d).noalias() = doh * p;
        dp.noalias() = doh.transpose() * s.v.middleRows(h * d, d);
        ds = p.array() * (dp.array().colwise() - (dp.array() * p.array()).rowwise().sum());
        ds *= scale;
        dq.middleRows(h * d, d).noalias() = s.k.middleRows(h * d, d) * ds.transpose();
        dk.middleRows(h * d, d).noalias() = s.q.middleRows(h * d, d) * ds;
      }
      if (gq) MatrixMap(gq->data(), c, c).noalias() += dq * xb.transpose();
      if (gk) MatrixMap(gk->data(), c, c).noalias() += dk * xb.transpose();
      if (gv) MatrixMap(gv->data(), c, c).noalias() += dv * xb.transpose();
      if (gx) {
        MatrixMap gxb(gx->data() + b * c * n, c, n);
        gxb += gob;
        gxb.noalias() += mq.transpose() * dq;
        gxb.noalias() += mk.transpose() * dk;
        gxb.noalias() += mv.transpose() * dv;
      }
    }
  });
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape(), a.values() + b.values());
  detail::record(out, "add", {a, b}, [a, b](const Array& g) {
    if (Array* ga = detail::grad_sink(a)) *ga += g;
    if (Array* gb = detail::grad_sink(b)) *gb += g;
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape(), a.values() - b.values());
  detail::record(out, "sub", {a, b}, [a, b](const Array& g) {
    if (Array* ga = detail::grad_sink(a)) *ga += g;
    if (Array* gb = detail::grad_sink(b)) *gb -= g;
  });
  return out;
}

Tensor mul_scalar(const Tensor& x, double s) {
  Tensor out(x.shape(), x.values() * s);
  detail::record(out, "mul_scalar", {x}, [x, s](const Array& g) {
    if (Array* gx = detail::grad_sink(x)) *gx += g * s;
  });
  return out;
}

Tensor silu(const Tensor& x) {
  Array sig = 1.0 / (1.0 + (-x.values()).exp());
  Tensor out(x.shape(), x.values() * sig);
  detail::record(out, "silu", {x}, [x, sig = std::move(sig)](const Array& g) {
    if (Array* gx = detail::grad_sink(x)) *gx += g * sig * (1.0 + x.values() * (1.0 - sig));
  });
  return out;
}

Tensor leaky_relu(const Tensor& x, double slope) {
  Tensor out(x.shape(), (x.values() > 0).select(x.values(), x.values() * slope));
  detail::record(out, "leaky_relu", {x}, [x, slope](const Array& g) {
    if (Array* gx = detail::grad_sink(x)) *gx += (x.values() > 0).select(g, g * slope);
  });
  return out;
}

Tensor nearest_upsample_x2(const Tensor& x) {
  require_rank(x, 4, "nearest_upsample_x2", "input");
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (Index p = 0; p < planes; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * 4 * h * w;
    for (Index y = 0; y < 2 * h; ++y)
      for (Index xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
  }
  detail::record(out, "nearest_upsample_x2", {x}, [x, planes, h, w](const Array& g) {
    Array* gx = detail::grad_sink(x);
    if (!gx) return;
    for (Index p = 0; p < planes; ++p) {
      const double* src = g.data() + p * 4 * h * w;
      double* dst = gx->data() + p * h * w;
      for (Index y = 0; y < 2 * h; ++y)
        for (Index xx = 0; xx < 2 * w; ++xx) dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
    }
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const Index batch = x.dim(0), in = x.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in || bias.numel() != outf) {
    throw DimensionError("linear: input " + shape_string(x.shape()) + " incompatible with weight " +
                         shape_string(weight.shape()));
  }
  Tensor out({batch, outf});
  ConstMatrixMap wmat(weight.data(), outf, in);
  // Row at a time so each batch element's result is independent of batch size.
  Eigen::VectorXd xb(in), yb(outf);
  for (Index b = 0; b < batch; ++b) {
    xb = Eigen::Map<const Eigen::VectorXd>(x.data() + b * in, in);
    yb.noalias() = wmat * xb;
    yb += Eigen::Map<const Eigen::VectorXd>(bias.data(), outf);
    Eigen::Map<Eigen::VectorXd>(out.data() + b * outf, outf) = yb;
  }
  detail::record(out, "linear", {x, weight, bias}, [x, weight, bias, batch, in, outf](const Array& g) {
    ConstMatrixMap gy(g.data(), batch, outf);
    if (Array* gx = detail::grad_sink(x))
      MatrixMap(gx->data(), batch, in).noalias() += gy * ConstMatrixMap(weight.data(), outf, in);
    if (Array* gw = detail::grad_sink(weight))
      MatrixMap(gw->data(), outf, in).noalias() += gy.transpose() * ConstMatrixMap(x.data(), batch, in);
    if (Array* gb = detail::grad_sink(bias))
      Eigen::Map<Eigen::RowVectorXd>(gb->data(), outf) += gy.colwise().sum();
  });
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<Index>& indices) {
  require_rank(table, 2, "embedding_lookup", "table");
  const Index rows = table.dim(0), dim = table.dim(1), batch = static_cast<Index>(indices.size());
  Tensor out({batch, dim});
  for (Index i = 0; i < batch; ++i) {
    const Index r = indices[i];
    if (r < 0 || r >= rows) {
      throw IndexError("embedding_lookup: row " + std::to_string(r) + " outside [0, " +
                       std::to_string(rows) + ")");
    }
    out.values().segment(i * dim, dim) = table.values().segment(r * dim, dim);
  }
  detail::record(out, "embedding_lookup", {table}, [table, indices, dim](const Array& g) {
    Array* gt = detail::grad_sink(table);
    if (!gt) return;
    for (std::size_t i = 0; i < indices.size(); ++i)
      gt->segment(indices[i] * dim, dim) += g.segment(static_cast<Index>(i) * dim, dim);
  });
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& v) {
  require_rank(x, 4, "add_channel_bias", "input");
  const Index bc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  if (v.numel() != bc) {
    throw DimensionError("add_channel_bias: need " + std::to_string(bc) + " values, got " +
                         shape_string(v.shape()));
  }
  Tensor out(x.shape(), x.values());
  for (Index i = 0; i < bc; ++i) out.values().segment(i * hw, hw) += v.values()[i];
  detail::record(out, "add_channel_bias", {x, v}, [x, v, bc, hw](const Array& g) {
    if (Array* gx = detail::grad_sink(x)) *gx += g;
    if (Array* gv = detail::grad_sink(v))
      for (Index i = 0; i < bc; ++i) (*gv)[i] += g.segment(i * hw, hw).sum();
  });
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  for (const Tensor& p : parts) require_rank(p, 4, "concat_channels", "input");
  const Index batch = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3), hw = h * w;
  Index channels = 0;
  for (const Tensor& p : parts) {
    if (p.dim(0) != batch || p.dim(2) != h || p.dim(3) != w) {
      throw DimensionError("concat_channels: incompatible " + shape_string(p.shape()) + " and " +
                           shape_string(parts[0].shape()));
    }
    channels += p.dim(1);
  }
  Tensor out({batch, channels, h, w});
  for (Index b = 0; b < batch; ++b) {
    Index offset = b * channels * hw;
    for (const Tensor& p : parts) {
      const Index len = p.dim(1) * hw;
      out.values().segment(offset, len) = p.values().segment(b * len, len);
      offset += len;
    }
  }
  detail::record(out, "concat_channels", parts, [parts, batch, channels, hw](const Array& g) {
    for (Index b = 0; b < batch; ++b) {
      Index offset = b * channels * hw;
      for (const Tensor& p : parts) {
        const Index len = p.dim(1) * hw;
        if (Array* gp = detail::grad_sink(p)) gp->segment(b * len, len) += g.segment(offset, len);
        offset += len;
      }
    }
  });
  return out;
}

Tensor repeat_batch(const Tensor& x, Index n) {
  if (x.rank() < 1 || x.dim(0) != 1) throw DimensionError("repeat_batch: input batch must be 1");
  Shape shape = x.shape();
  shape[0] = n;
  const Index len = x.numel();
  Tensor out(shape, x.values().replicate(n, 1));
  detail::record(out, "repeat_batch", {x}, [x, n, len](const Array& g) {
    if (Array* gx = detail::grad_sink(x))
      for (Index i = 0; i < n; ++i) *gx += g.segment(i * len, len);
  });
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::scalar(x.values().sum());
  detail::record(out, "sum", {x}, [x](const Array& g) {
    if (Array* gx = detail::grad_sink(x)) *gx += g[0];
  });
  return out;
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(x.values().sum() / n);
  detail::record(out, "mean", {x}, [x, n](const Array& g) {
    if (Array* gx = detail::grad_sink(x)) *gx += g[0] / n;
  });
  return out;
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mse_loss");
  const double n = static_cast<double>(a.numel());
  Array diff = a.values() - b.values();
  Tensor out = Tensor::scalar(diff.square().sum() / n);
  detail::record(out, "mse_loss", {a, b}, [a, b, diff = std::move(diff), n](const Array& g) {
    const double k = 2.0 * g[0] / n;
    if (Array* ga = detail::grad_sink(a)) *ga += k * diff;
    if (Array* gb = detail::grad_sink(b)) *gb -= k * diff;
  });
  return out;
}

}  // namespace segdiff
