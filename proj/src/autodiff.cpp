#include "fsdiff/autodiff.hpp"

#include "fsdiff/similarity.hpp"
#include "fsdiff/wavelet.hpp"

#include <cmath>
#include <stdexcept>

namespace fsdiff::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using CMapRow = Eigen::Map<const RowMat>;

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("autodiff: operands live on different tapes");
}

void require_rank(Var v, std::size_t r, const char* op) {
  if (v.shape().size() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(v.shape()));
}

}  // namespace

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, grad_enabled_, false, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<Var> inputs,
               std::function<void(const Tensor&)> adjoint) {
  bool needs = false;
  if (grad_enabled_)
    for (Var in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, false, needs ? std::move(adjoint) : nullptr});
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_.at(v.id).requires_grad) return;
  grad_buffer(v) += g;
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.has_grad ? n.grad : Tensor(n.value.shape());
}

void Tape::backward(Var root) {
  if (!grad_enabled_) throw std::logic_error("backward on a tape with gradients disabled");
  if (value(root).size() != 1) throw ShapeError("backward: root must be a scalar");
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  grad_buffer(root)[0] = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.adjoint) continue;
    const Tensor g = n.grad;
    n.adjoint(g);
  }
}

Var add(Var a, Var b) {
  same_tape(a, b);
  Tensor out = a.value() + b.value();
  Tape* t = a.tape;
  return t->push(std::move(out), {a, b}, [t, a, b](const Tensor& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  Tensor out = a.value() - b.value();
  Tape* t = a.tape;
  return t->push(std::move(out), {a, b}, [t, a, b](const Tensor& g) {
    t->accumulate(a, g);
    t->accumulate(b, g * -1.0);
  });
}

Var scale(Var a, double s) {
  Tape* t = a.tape;
  return t->push(a.value() * s, {a}, [t, a, s](const Tensor& g) { t->accumulate(a, g * s); });
}

Var silu(Var a) {
  const Tensor& x = a.value();
  Tensor out(x.shape());
  out.vec() = x.vec().array() / (1.0 + (-x.vec().array()).exp());
  Tape* t = a.tape;
  return t->push(std::move(out), {a}, [t, a](const Tensor& g) {
    const auto& xv = a.value().vec().array();
    const Eigen::ArrayXd sig = 1.0 / (1.0 + (-xv).exp());
    Tensor gx(a.shape());
    gx.vec() = g.vec().array() * sig * (1.0 + xv * (1.0 - sig));
    t->accumulate(a, gx);
  });
}

Var mask_mul(Var x, const Tensor& mask) {
  Tensor out = hadamard(x.value(), mask);
  Tape* t = x.tape;
  return t->push(std::move(out), {x}, [t, x, mask](const Tensor& g) {
    t->accumulate(x, hadamard(g, mask));
  });
}

Var item_lincomb(Var a, Var b, std::span<const double> alpha, std::span<const double> beta) {
  same_tape(a, b);
  a.value().check_same(b.value(), "item_lincomb");
  const std::size_t n = a.shape().at(0);
  if (alpha.size() != n || beta.size() != n)
    throw ShapeError("item_lincomb: coefficient count must equal batch size");
  const auto per = static_cast<Eigen::Index>(a.value().size() / n);
  Tensor out(a.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const auto off = static_cast<Eigen::Index>(i) * per;
    out.vec().segment(off, per) =
        alpha[i] * a.value().vec().segment(off, per) + beta[i] * b.value().vec().segment(off, per);
  }
  Tape* t = a.tape;
  std::vector<double> al(alpha.begin(), alpha.end()), be(beta.begin(), beta.end());
  return t->push(std::move(out), {a, b}, [t, a, b, al, be, per](const Tensor& g) {
    Tensor ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < al.size(); ++i) {
      const auto off = static_cast<Eigen::Index>(i) * per;
      ga.vec().segment(off, per) = al[i] * g.vec().segment(off, per);
      gb.vec().segment(off, per) = be[i] * g.vec().segment(off, per);
    }
    t->accumulate(a, ga);
    t->accumulate(b, gb);
  });
}

namespace {
Var linear_impl(Var x, Var w, const Var* b) {
  require_rank(x, 2, "linear");
  require_rank(w, 2, "linear");
  const auto n = static_cast<Eigen::Index>(x.shape()[0]);
  const auto in = static_cast<Eigen::Index>(x.shape()[1]);
  const auto outd = static_cast<Eigen::Index>(w.shape()[0]);
  if (static_cast<Eigen::Index>(w.shape()[1]) != in)
    throw ShapeError("linear: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  if (b && b->shape() != Shape{static_cast<std::size_t>(outd)})
    throw ShapeError("linear: bias shape " + shape_str(b->shape()));
  Tensor out({static_cast<std::size_t>(n), static_cast<std::size_t>(outd)});
  MapRow o(out.data(), n, outd);
  o.noalias() = CMapRow(x.value().data(), n, in) * CMapRow(w.value().data(), outd, in).transpose();
  if (b) o.rowwise() += b->value().vec().transpose();
  Tape* t = x.tape;
  std::vector<Var> ins{x, w};
  if (b) ins.push_back(*b);
  const bool has_b = b != nullptr;
  const Var bv = b ? *b : Var{};
  return t->push(std::move(out), ins, [t, x, w, bv, has_b, n, in, outd](const Tensor& g) {
    CMapRow gm(g.data(), n, outd);
    if (t->requires_grad(x)) {
      Tensor gx(x.shape());
      MapRow(gx.data(), n, in).noalias() = gm * CMapRow(w.value().data(), outd, in);
      t->accumulate(x, gx);
    }
    if (t->requires_grad(w)) {
      Tensor& gw = t->grad_buffer(w);
      MapRow(gw.data(), outd, in).noalias() += gm.transpose() * CMapRow(x.value().data(), n, in);
    }
    if (has_b && t->requires_grad(bv)) {
      Tensor& gb = t->grad_buffer(bv);
      gb.vec() += gm.colwise().sum().transpose();
    }
  });
}
}  // namespace

Var linear(Var x, Var w, Var b) {
  same_tape(x, w);
  same_tape(x, b);
  return linear_impl(x, w, &b);
}

Var linear_nobias(Var x, Var w) {
  same_tape(x, w);
  return linear_impl(x, w, nullptr);
}

namespace {

// col: (C*k*k, H*W) for one image plane set.
void im2col(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
            RowMat& col) {
  const long pad = static_cast<long>(k / 2);
  col.resize(static_cast<Eigen::Index>(c * k * k), static_cast<Eigen::Index>(h * w));
  double* out = col.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        const double* plane = img + ch * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(out, out + w, 0.0);
            out += w;
            continue;
          }
          const double* row = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + dx;
            *out++ = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0 : row[sx];
          }
        }
      }
}

void col2im_add(const RowMat& col, std::size_t c, std::size_t h, std::size_t w, std::size_t k,
                double* img) {
  const long pad = static_cast<long>(k / 2);
  const double* in = col.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        double* plane = img + ch * h * w;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            in += w;
            continue;
          }
          double* row = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x, ++in) {
            const long sx = static_cast<long>(x) + dx;
            if (sx >= 0 && sx < static_cast<long>(w)) row[sx] += *in;
          }
        }
      }
}

}  // namespace

Var conv2d(Var x, Var w, Var b) {
  same_tape(x, w);
  same_tape(x, b);
  require_rank(x, 4, "conv2d");
  require_rank(w, 4, "conv2d");
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  const std::size_t n = xs[0], cin = xs[1], h = xs[2], wd = xs[3];
  const std::size_t cout = ws[0], k = ws[2];
  if (ws[1] != cin || ws[3] != k || k % 2 == 0)
    throw ShapeError("conv2d: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  if (b.shape() != Shape{cout}) throw ShapeError("conv2d: bias shape " + shape_str(b.shape()));
  const auto kk = static_cast<Eigen::Index>(cin * k * k);
  const auto hw = static_cast<Eigen::Index>(h * wd);
  const auto co = static_cast<Eigen::Index>(cout);

  Tensor out({n, cout, h, wd});
  CMapRow wm(w.value().data(), co, kk);
  RowMat col;
  for (std::size_t i = 0; i < n; ++i) {
    im2col(x.value().data() + i * cin * h * wd, cin, h, wd, k, col);
    MapRow o(out.data() + i * cout * h * wd, co, hw);
    o.noalias() = wm * col;
    o.colwise() += b.value().vec();
  }
  Tape* t = x.tape;
  return t->push(std::move(out), {x, w, b}, [=](const Tensor& g) {
    const bool gx_needed = t->requires_grad(x);
    const bool gw_needed = t->requires_grad(w);
    const bool gb_needed = t->requires_grad(b);
    Tensor gx = gx_needed ? Tensor(x.shape()) : Tensor();
    CMapRow wmat(w.value().data(), co, kk);
    RowMat col_i, dcol;
    for (std::size_t i = 0; i < n; ++i) {
      CMapRow go(g.data() + i * cout * h * wd, co, hw);
      if (gw_needed) {
        im2col(x.value().data() + i * cin * h * wd, cin, h, wd, k, col_i);
        MapRow(t->grad_buffer(w).data(), co, kk).noalias() += go * col_i.transpose();
      }
      if (gb_needed) t->grad_buffer(b).vec() += go.rowwise().sum();
      if (gx_needed) {
        dcol.noalias() = wmat.transpose() * go;
        col2im_add(dcol, cin, h, wd, k, gx.data() + i * cin * h * wd);
      }
    }
    if (gx_needed) t->accumulate(x, gx);
  });
}

Var add_channel_bias(Var x, Var b) {
  same_tape(x, b);
  require_rank(x, 4, "add_channel_bias");
  const auto& s = x.shape();
  if (b.shape() != Shape{s[0], s[1]})
    throw ShapeError("add_channel_bias: bias " + shape_str(b.shape()) + " vs " + shape_str(s));
  const std::size_t hw = s[2] * s[3];
  Tensor out = x.value();
  for (std::size_t nc = 0; nc < s[0] * s[1]; ++nc)
    out.vec().segment(static_cast<Eigen::Index>(nc * hw), static_cast<Eigen::Index>(hw)).array() +=
        b.value()[nc];
  Tape* t = x.tape;
  return t->push(std::move(out), {x, b}, [t, x, b, hw](const Tensor& g) {
    t->accumulate(x, g);
    if (t->requires_grad(b)) {
      Tensor& gb = t->grad_buffer(b);
      for (std::size_t nc = 0; nc < gb.size(); ++nc)
        gb[nc] += g.vec().segment(static_cast<Eigen::Index>(nc * hw), static_cast<Eigen::Index>(hw)).sum();
    }
  });
}

Var avg_pool2(Var x) {
  require_rank(x, 4, "avg_pool2");
  const auto& s = x.shape();
  if (s[2] % 2 || s[3] % 2) throw ShapeError("avg_pool2: odd spatial size " + shape_str(s));
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = h / 2, ow = w / 2;
  Tensor out({s[0], s[1], oh, ow});
  const Tensor& v = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const std::size_t a = p * h * w + 2 * y * w + 2 * xx;
        out[p * oh * ow + y * ow + xx] = 0.25 * (v[a] + v[a + 1] + v[a + w] + v[a + w + 1]);
      }
  Tape* t = x.tape;
  return t->push(std::move(out), {x}, [=](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double gv = 0.25 * g[p * oh * ow + y * ow + xx];
          const std::size_t a = p * h * w + 2 * y * w + 2 * xx;
          gx[a] = gx[a + 1] = gx[a + w] = gx[a + w + 1] = gv;
        }
    t->accumulate(x, gx);
  });
}

Var upsample2(Var x) {
  require_rank(x, 4, "upsample2");
  const auto& s = x.shape();
  const std::size_t planes = s[0] * s[1], h = s[2], w = s[3], oh = 2 * h, ow = 2 * w;
  Tensor out({s[0], s[1], oh, ow});
  const Tensor& v = x.value();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[p * oh * ow + y * ow + xx] = v[p * h * w + (y / 2) * w + xx / 2];
  Tape* t = x.tape;
  return t->push(std::move(out), {x}, [=](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) gx[p * h * w + (y / 2) * w + xx / 2] += g[p * oh * ow + y * ow + xx];
    t->accumulate(x, gx);
  });
}

Var concat_channels(Var a, Var b) {
  same_tape(a, b);
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat_channels: " + shape_str(sa) + " vs " + shape_str(sb));
  const std::size_t n = sa[0], hw = sa[2] * sa[3], ca = sa[1] * hw, cb = sb[1] * hw;
  Tensor out({n, sa[1] + sb[1], sa[2], sa[3]});
  for (std::size_t i = 0; i < n; ++i) {
    out.vec().segment(static_cast<Eigen::Index>(i * (ca + cb)), static_cast<Eigen::Index>(ca)) =
        a.value().vec().segment(static_cast<Eigen::Index>(i * ca), static_cast<Eigen::Index>(ca));
    out.vec().segment(static_cast<Eigen::Index>(i * (ca + cb) + ca), static_cast<Eigen::Index>(cb)) =
        b.value().vec().segment(static_cast<Eigen::Index>(i * cb), static_cast<Eigen::Index>(cb));
  }
  Tape* t = a.tape;
  return t->push(std::move(out), {a, b}, [=](const Tensor& g) {
    Tensor ga(a.shape()), gb(b.shape());
    for (std::size_t i = 0; i < n; ++i) {
      ga.vec().segment(static_cast<Eigen::Index>(i * ca), static_cast<Eigen::Index>(ca)) =
          g.vec().segment(static_cast<Eigen::Index>(i * (ca + cb)), static_cast<Eigen::Index>(ca));
      gb.vec().segment(static_cast<Eigen::Index>(i * cb), static_cast<Eigen::Index>(cb)) =
          g.vec().segment(static_cast<Eigen::Index>(i * (ca + cb) + ca), static_cast<Eigen::Index>(cb));
    }
    t->accumulate(a, ga);
    t->accumulate(b, gb);
  });
}

Var slice_channels(Var x, std::size_t start, std::size_t count) {
  require_rank(x, 4, "slice_channels");
  const auto& s = x.shape();
  if (start + count > s[1]) throw ShapeError("slice_channels: range outside " + shape_str(s));
  const std::size_t n = s[0], hw = s[2] * s[3], full = s[1] * hw, part = count * hw;
  Tensor out({n, count, s[2], s[3]});
  for (std::size_t i = 0; i < n; ++i)
    out.vec().segment(static_cast<Eigen::Index>(i * part), static_cast<Eigen::Index>(part)) =
        x.value().vec().segment(static_cast<Eigen::Index>(i * full + start * hw), static_cast<Eigen::Index>(part));
  Tape* t = x.tape;
  return t->push(std::move(out), {x}, [=](const Tensor& g) {
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < n; ++i)
      gx.vec().segment(static_cast<Eigen::Index>(i * full + start * hw), static_cast<Eigen::Index>(part)) =
          g.vec().segment(static_cast<Eigen::Index>(i * part), static_cast<Eigen::Index>(part));
    t->accumulate(x, gx);
  });
}

Var high_frequency(Var x) {
  Tensor out = fsdiff::high_frequency(x.value());
  Tape* t = x.tape;
  return t->push(std::move(out), {x}, [t, x](const Tensor& g) {
    t->accumulate(x, high_frequency_adjoint(g, x.shape()));
  });
}

Var mse(Var a, Var b) {
  same_tape(a, b);
  a.value().check_same(b.value(), "mse");
  const Eigen::VectorXd diff = a.value().vec() - b.value().vec();
  const double n = static_cast<double>(diff.size());
  Tape* t = a.tape;
  return t->push(Tensor({1}, {diff.squaredNorm() / n}), {a, b}, [t, a, b, diff, n](const Tensor& g) {
    Tensor ga(a.shape(), (2.0 * g[0] / n) * diff);
    t->accumulate(a, ga);
    t->accumulate(b, ga * -1.0);
  });
}

Var pairwise_similarity_kl(Var source, Var adapted) {
  same_tape(source, adapted);
  source.value().check_same(adapted.value(), "pairwise_similarity_kl");
  const std::size_t n = source.shape().at(0);
  const auto d = static_cast<Eigen::Index>(source.value().size() / n);
  const auto rows = static_cast<Eigen::Index>(n);
  const RowMat src = CMapRow(source.value().data(), rows, d);
  const RowMat ada = CMapRow(adapted.value().data(), rows, d);
  Tape* t = source.tape;
  const bool want_src = t->grad_enabled() && t->requires_grad(source);
  const bool want_ada = t->grad_enabled() && t->requires_grad(adapted);
  RowMat gs, ga;
  const double loss = fsdiff::pairwise_similarity_kl(src, ada, want_src ? &gs : nullptr,
                                                           want_ada ? &ga : nullptr);
  return t->push(Tensor({1}, {loss}), {source, adapted},
                 [t, source, adapted, gs, ga, want_src, want_ada](const Tensor& g) {
                   if (want_src) {
                     Tensor gt(source.shape());
                     MapRow(gt.data(), gs.rows(), gs.cols()) = g[0] * gs;
                     t->accumulate(source, gt);
                   }
                   if (want_ada) {
                     Tensor gt(adapted.shape());
                     MapRow(gt.data(), ga.rows(), ga.cols()) = g[0] * ga;
                     t->accumulate(adapted, gt);
                   }
                 });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.empty() || scalars.size() != weights.size())
    throw std::invalid_argument("weighted_sum: need matching nonempty scalars and weights");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw ShapeError("weighted_sum: operands must be scalars");
    total += weights[i] * scalars[i].value()[0];
  }
  Tape* t = scalars.front().tape;
  std::vector<Var> ins(scalars.begin(), scalars.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return t->push(Tensor({1}, {total}), ins, [t, ins, ws](const Tensor& g) {
    for (std::size_t i = 0; i < ins.size(); ++i) t->accumulate(ins[i], Tensor({1}, {ws[i] * g[0]}));
  });
}

}  // namespace fsdiff::ad
