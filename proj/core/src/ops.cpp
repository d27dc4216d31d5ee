#include "sca/ops.hpp"

#include <algorithm>
#include <cmath>

#include "sca/errors.hpp"

namespace sca {

namespace {

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw RankError(std::string(op) + ": expected rank " +
                    std::to_string(rank) + ", got " +
                    shape_to_string(v.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw UsageError("operands live on different tapes");
  }
  return *a.tape;
}

// Elementwise unary op whose derivative is a function of input and output.
template <class F, class D>
Var unary(Var x, F f, D dfdx) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return x.tape->record(
      std::move(out), {x}, [xi = x.id, dfdx](Tape& t, std::size_t self) {
        Tensor* gx = t.grad_target(xi);
        if (!gx) return;
        const Tensor& g = t.grad(self);
        const Tensor& y = t.value(self);
        const Tensor& xv = t.value(xi);
        for (std::size_t i = 0; i < g.size(); ++i) {
          (*gx)[i] += g[i] * dfdx(xv[i], y[i]);
        }
      });
}

}  // namespace

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.record(std::move(out), {a, b},
                     [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       for (auto id : {ai, bi}) {
                         if (Tensor* gx = t.grad_target(id)) {
                           for (std::size_t i = 0; i < g.size(); ++i)
                             (*gx)[i] += g[i];
                         }
                       }
                     });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return tape.record(std::move(out), {a, b},
                     [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       if (Tensor* ga = t.grad_target(ai)) {
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*ga)[i] += g[i];
                       }
                       if (Tensor* gb = t.grad_target(bi)) {
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*gb)[i] -= g[i];
                       }
                     });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.record(std::move(out), {a, b},
                     [ai = a.id, bi = b.id](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       const Tensor& av = t.value(ai);
                       const Tensor& bv = t.value(bi);
                       if (Tensor* ga = t.grad_target(ai)) {
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*ga)[i] += g[i] * bv[i];
                       }
                       if (Tensor* gb = t.grad_target(bi)) {
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*gb)[i] += g[i] * av[i];
                       }
                     });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= factor;
  return a.tape->record(std::move(out), {a},
                        [ai = a.id, factor](Tape& t, std::size_t self) {
                          Tensor* ga = t.grad_target(ai);
                          if (!ga) return;
                          const Tensor& g = t.grad(self);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            (*ga)[i] += g[i] * factor;
                        });
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const std::size_t rows = av.dim(0), inner = av.dim(1), cols = bv.dim(1);
  if (bv.dim(0) != inner) {
    throw DimensionError("matmul: inner dimensions disagree, " +
                         shape_to_string(av.shape()) + " x " +
                         shape_to_string(bv.shape()));
  }
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i) {
    double* o = &out[i * cols];
    for (std::size_t p = 0; p < inner; ++p) {
      const double x = av[i * inner + p];
      const double* br = bv.data().data() + p * cols;
      for (std::size_t j = 0; j < cols; ++j) o[j] += x * br[j];
    }
  }
  return tape.record(
      std::move(out), {a, b},
      [ai = a.id, bi = b.id, rows, inner, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.value(ai);
        const Tensor& bv = t.value(bi);
        if (Tensor* ga = t.grad_target(ai)) {
          // dA = G * B^T
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t p = 0; p < inner; ++p) {
              double s = 0.0;
              for (std::size_t j = 0; j < cols; ++j)
                s += g[i * cols + j] * bv[p * cols + j];
              (*ga)[i * inner + p] += s;
            }
          }
        }
        if (Tensor* gb = t.grad_target(bi)) {
          // dB = A^T * G
          for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t p = 0; p < inner; ++p) {
              const double x = av[i * inner + p];
              double* gr = &(*gb)[p * cols];
              for (std::size_t j = 0; j < cols; ++j) gr[j] += x * g[i * cols + j];
            }
          }
        }
      });
}

Var matvec(Var a, Var x) {
  Tape& tape = tape_of(a, x);
  require_rank(a, 2, "matvec");
  require_rank(x, 1, "matvec");
  const Tensor& av = a.value();
  const Tensor& xv = x.value();
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  if (xv.size() != cols) {
    throw DimensionError("matvec: " + shape_to_string(av.shape()) + " x " +
                         shape_to_string(xv.shape()));
  }
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += av[i * cols + j] * xv[j];
    out[i] = s;
  }
  return tape.record(
      std::move(out), {a, x},
      [ai = a.id, xi = x.id, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* ga = t.grad_target(ai)) {
          const Tensor& xv = t.value(xi);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              (*ga)[i * cols + j] += g[i] * xv[j];
        }
        if (Tensor* gx = t.grad_target(xi)) {
          const Tensor& av = t.value(ai);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              (*gx)[j] += g[i] * av[i * cols + j];
        }
      });
}

Var vecmat(Var w, Var a) {
  Tape& tape = tape_of(w, a);
  require_rank(w, 1, "vecmat");
  require_rank(a, 2, "vecmat");
  const Tensor& wv = w.value();
  const Tensor& av = a.value();
  const std::size_t rows = av.dim(0), cols = av.dim(1);
  if (wv.size() != rows) {
    throw DimensionError("vecmat: " + shape_to_string(wv.shape()) + " x " +
                         shape_to_string(av.shape()));
  }
  Tensor out({cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += wv[i] * av[i * cols + j];
  return tape.record(
      std::move(out), {w, a},
      [wi = w.id, ai = a.id, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* gw = t.grad_target(wi)) {
          const Tensor& av = t.value(ai);
          for (std::size_t i = 0; i < rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += g[j] * av[i * cols + j];
            (*gw)[i] += s;
          }
        }
        if (Tensor* ga = t.grad_target(ai)) {
          const Tensor& wv = t.value(wi);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              (*ga)[i * cols + j] += wv[i] * g[j];
        }
      });
}

Var outer(Var u, Var v) {
  Tape& tape = tape_of(u, v);
  if (u.value().rank() != 1 || v.value().rank() != 1) {
    throw RankError("outer: both operands must be vectors, got " +
                    shape_to_string(u.shape()) + " and " +
                    shape_to_string(v.shape()));
  }
  const Tensor& uv = u.value();
  const Tensor& vv = v.value();
  const std::size_t rows = uv.size(), cols = vv.size();
  Tensor out({rows, cols});
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = uv[i] * vv[j];
  return tape.record(
      std::move(out), {u, v},
      [ui = u.id, vi = v.id, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* gu = t.grad_target(ui)) {
          const Tensor& vv = t.value(vi);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              (*gu)[i] += g[i * cols + j] * vv[j];
        }
        if (Tensor* gv = t.grad_target(vi)) {
          const Tensor& uv = t.value(ui);
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              (*gv)[j] += g[i * cols + j] * uv[i];
        }
      });
}

Var broadcast_add_col(Var m, Var v) {
  Tape& tape = tape_of(m, v);
  require_rank(m, 2, "broadcast_add_col");
  require_rank(v, 1, "broadcast_add_col");
  const std::size_t rows = m.value().dim(0), cols = m.value().dim(1);
  if (v.size() != rows) {
    throw DimensionError("broadcast_add_col: " + shape_to_string(m.shape()) +
                         " vs " + shape_to_string(v.shape()));
  }
  Tensor out = m.value();
  const Tensor& vv = v.value();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += vv[i];
  return tape.record(
      std::move(out), {m, v},
      [mi = m.id, vi = v.id, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* gm = t.grad_target(mi)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gm)[i] += g[i];
        }
        if (Tensor* gv = t.grad_target(vi)) {
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j)
              (*gv)[i] += g[i * cols + j];
        }
      });
}

Var add_scalar(Var v, Var s) {
  Tape& tape = tape_of(v, s);
  if (s.size() != 1) {
    throw DimensionError("add_scalar: expected single-element operand, got " +
                         shape_to_string(s.shape()));
  }
  Tensor out = v.value();
  const double c = s.value()[0];
  for (auto& x : out.data()) x += c;
  return tape.record(std::move(out), {v, s},
                     [vi = v.id, si = s.id](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       if (Tensor* gv = t.grad_target(vi)) {
                         for (std::size_t i = 0; i < g.size(); ++i)
                           (*gv)[i] += g[i];
                       }
                       if (Tensor* gs = t.grad_target(si)) {
                         double total = 0.0;
                         for (double x : g.data()) total += x;
                         (*gs)[0] += total;
                       }
                     });
}

Var softmax(Var z) {
  const Tensor& zv = z.value();
  if (zv.empty()) throw DomainError("softmax of an empty vector");
  require_rank(z, 1, "softmax");
  const double top = *std::max_element(zv.data().begin(), zv.data().end());
  Tensor out(zv.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < zv.size(); ++i) {
    out[i] = std::exp(zv[i] - top);
    total += out[i];
  }
  for (auto& x : out.data()) x /= total;
  return z.tape->record(std::move(out), {z},
                        [zi = z.id](Tape& t, std::size_t self) {
                          Tensor* gz = t.grad_target(zi);
                          if (!gz) return;
                          const Tensor& g = t.grad(self);
                          const Tensor& p = t.value(self);
                          double dot = 0.0;
                          for (std::size_t i = 0; i < p.size(); ++i)
                            dot += g[i] * p[i];
                          for (std::size_t i = 0; i < p.size(); ++i)
                            (*gz)[i] += p[i] * (g[i] - dot);
                        });
}

Var tanh_map(Var x) {
  return unary(
      x, [](double v) { return std::tanh(v); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var log_map(Var x) {
  return unary(
      x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Var hadamard(Var a, Var b, BroadcastAxis axis) {
  Tape& tape = tape_of(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();

  if (axis == BroadcastAxis::Auto && av.shape() == bv.shape()) {
    return mul(a, b);
  }
  if (av.rank() != 3 || bv.rank() != 1) {
    throw DimensionError("hadamard: cannot broadcast " +
                         shape_to_string(bv.shape()) + " over " +
                         shape_to_string(av.shape()));
  }
  const std::size_t width = av.dim(0), height = av.dim(1), channels = av.dim(2);
  const std::size_t locations = width * height;
  if (axis == BroadcastAxis::Auto) {
    if (locations == channels) {
      throw UsageError(
          "hadamard: W*H == C, broadcast axis must be given explicitly");
    }
    if (bv.size() == locations) {
      axis = BroadcastAxis::Spatial;
    } else if (bv.size() == channels) {
      axis = BroadcastAxis::Channel;
    }
  }
  const std::size_t expected =
      axis == BroadcastAxis::Spatial ? locations : channels;
  if (axis == BroadcastAxis::Auto || bv.size() != expected) {
    throw DimensionError("hadamard: vector " + shape_to_string(bv.shape()) +
                         " does not match map " + shape_to_string(av.shape()));
  }
  const bool spatial = axis == BroadcastAxis::Spatial;

  // Broadcast index of element (w, h, c).
  auto index = [=](std::size_t w, std::size_t h, std::size_t c) {
    return spatial ? location_index(w, h, width) : c;
  };

  Tensor out(av.shape());
  for (std::size_t w = 0; w < width; ++w)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t c = 0; c < channels; ++c)
        out.at(w, h, c) = av.at(w, h, c) * bv[index(w, h, c)];

  return tape.record(
      std::move(out), {a, b},
      [ai = a.id, bi = b.id, width, height, channels, index](
          Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = t.value(ai);
        const Tensor& bv = t.value(bi);
        Tensor* ga = t.grad_target(ai);
        Tensor* gb = t.grad_target(bi);
        for (std::size_t w = 0; w < width; ++w)
          for (std::size_t h = 0; h < height; ++h)
            for (std::size_t c = 0; c < channels; ++c) {
              const double gv = g.at(w, h, c);
              const std::size_t k = index(w, h, c);
              if (ga) ga->at(w, h, c) += gv * bv[k];
              if (gb) (*gb)[k] += gv * av.at(w, h, c);
            }
      });
}

Var mean_pool_spatial(Var v) {
  require_rank(v, 3, "mean_pool_spatial");
  const Tensor& in = v.value();
  const std::size_t locations = in.dim(0) * in.dim(1), channels = in.dim(2);
  Tensor out({channels});
  for (std::size_t l = 0; l < locations; ++l)
    for (std::size_t c = 0; c < channels; ++c) out[c] += in[l * channels + c];
  for (auto& x : out.data()) x /= static_cast<double>(locations);
  return v.tape->record(
      std::move(out), {v},
      [vi = v.id, locations, channels](Tape& t, std::size_t self) {
        Tensor* gv = t.grad_target(vi);
        if (!gv) return;
        const Tensor& g = t.grad(self);
        const double inv = 1.0 / static_cast<double>(locations);
        for (std::size_t l = 0; l < locations; ++l)
          for (std::size_t c = 0; c < channels; ++c)
            (*gv)[l * channels + c] += g[c] * inv;
      });
}

Var flatten_spatial(Var v) {
  require_rank(v, 3, "flatten_spatial");
  const Tensor& in = v.value();
  const std::size_t width = in.dim(0), height = in.dim(1), channels = in.dim(2);
  const std::size_t locations = width * height;
  Tensor out({channels, locations});
  for (std::size_t w = 0; w < width; ++w)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t c = 0; c < channels; ++c)
        out[c * locations + location_index(w, h, width)] = in.at(w, h, c);
  return v.tape->record(
      std::move(out), {v},
      [vi = v.id, width, height, channels](Tape& t, std::size_t self) {
        Tensor* gv = t.grad_target(vi);
        if (!gv) return;
        const Tensor& g = t.grad(self);
        const std::size_t locations = width * height;
        for (std::size_t w = 0; w < width; ++w)
          for (std::size_t h = 0; h < height; ++h)
            for (std::size_t c = 0; c < channels; ++c)
              gv->at(w, h, c) += g[c * locations + location_index(w, h, width)];
      });
}

Var unflatten_spatial(Var m, std::size_t width, std::size_t height) {
  require_rank(m, 2, "unflatten_spatial");
  const Tensor& in = m.value();
  const std::size_t channels = in.dim(0), locations = width * height;
  if (in.dim(1) != locations) {
    throw DimensionError("unflatten_spatial: " + shape_to_string(in.shape()) +
                         " cannot form a " + std::to_string(width) + "x" +
                         std::to_string(height) + " map");
  }
  Tensor out({width, height, channels});
  for (std::size_t w = 0; w < width; ++w)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t c = 0; c < channels; ++c)
        out.at(w, h, c) = in[c * locations + location_index(w, h, width)];
  return m.tape->record(
      std::move(out), {m},
      [mi = m.id, width, height, channels](Tape& t, std::size_t self) {
        Tensor* gm = t.grad_target(mi);
        if (!gm) return;
        const Tensor& g = t.grad(self);
        const std::size_t locations = width * height;
        for (std::size_t w = 0; w < width; ++w)
          for (std::size_t h = 0; h < height; ++h)
            for (std::size_t c = 0; c < channels; ++c)
              (*gm)[c * locations + location_index(w, h, width)] +=
                  g.at(w, h, c);
      });
}

Var mean_pool2x2(Var v) {
  require_rank(v, 3, "mean_pool2x2");
  const Tensor& in = v.value();
  const std::size_t width = in.dim(0), height = in.dim(1), channels = in.dim(2);
  if (width % 2 != 0 || height % 2 != 0) {
    throw DimensionError("mean_pool2x2: spatial extents must be even, got " +
                         shape_to_string(in.shape()));
  }
  const std::size_t ow = width / 2, oh = height / 2;
  Tensor out({ow, oh, channels});
  for (std::size_t w = 0; w < ow; ++w)
    for (std::size_t h = 0; h < oh; ++h)
      for (std::size_t c = 0; c < channels; ++c)
        out.at(w, h, c) = 0.25 * (in.at(2 * w, 2 * h, c) +
                                  in.at(2 * w + 1, 2 * h, c) +
                                  in.at(2 * w, 2 * h + 1, c) +
                                  in.at(2 * w + 1, 2 * h + 1, c));
  return v.tape->record(
      std::move(out), {v},
      [vi = v.id, ow, oh, channels](Tape& t, std::size_t self) {
        Tensor* gv = t.grad_target(vi);
        if (!gv) return;
        const Tensor& g = t.grad(self);
        for (std::size_t w = 0; w < ow; ++w)
          for (std::size_t h = 0; h < oh; ++h)
            for (std::size_t c = 0; c < channels; ++c) {
              const double q = 0.25 * g.at(w, h, c);
              gv->at(2 * w, 2 * h, c) += q;
              gv->at(2 * w + 1, 2 * h, c) += q;
              gv->at(2 * w, 2 * h + 1, c) += q;
              gv->at(2 * w + 1, 2 * h + 1, c) += q;
            }
      });
}

Var conv2d_same(Var input, Var weight, Var bias) {
  Tape& tape = tape_of(input, weight);
  tape_of(input, bias);
  require_rank(input, 3, "conv2d_same");
  require_rank(weight, 4, "conv2d_same");
  require_rank(bias, 1, "conv2d_same");
  const Tensor& in = input.value();
  const Tensor& wt = weight.value();
  const std::size_t width = in.dim(0), height = in.dim(1), cin = in.dim(2);
  const std::size_t cout = wt.dim(0), kernel = wt.dim(2);
  if (wt.dim(1) != cin || wt.dim(3) != kernel || bias.size() != cout) {
    throw DimensionError("conv2d_same: input " + shape_to_string(in.shape()) +
                         ", weight " + shape_to_string(wt.shape()) +
                         ", bias " + shape_to_string(bias.shape()));
  }
  if (kernel % 2 == 0) {
    throw DimensionError("conv2d_same: kernel extent must be odd, got " +
                         std::to_string(kernel));
  }
  const long radius = static_cast<long>(kernel / 2);

  // Repack weights as [kw][kh][cin][cout] so the inner loop is contiguous.
  auto repack = [=](const Tensor& w) {
    std::vector<double> packed(w.size());
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t a = 0; a < kernel; ++a)
          for (std::size_t b = 0; b < kernel; ++b)
            packed[((a * kernel + b) * cin + i) * cout + o] =
                w[((o * cin + i) * kernel + a) * kernel + b];
    return packed;
  };
  // Calls f(out_offset, in_offset, packed_offset) for every in-bounds tap.
  auto for_each_tap = [=](auto&& f) {
    for (std::size_t w = 0; w < width; ++w)
      for (std::size_t h = 0; h < height; ++h)
        for (std::size_t a = 0; a < kernel; ++a) {
          const long iw = static_cast<long>(w) + static_cast<long>(a) - radius;
          if (iw < 0 || iw >= static_cast<long>(width)) continue;
          for (std::size_t b = 0; b < kernel; ++b) {
            const long ih = static_cast<long>(h) + static_cast<long>(b) - radius;
            if (ih < 0 || ih >= static_cast<long>(height)) continue;
            f((w * height + h) * cout,
              (static_cast<std::size_t>(iw) * height +
               static_cast<std::size_t>(ih)) *
                  cin,
              (a * kernel + b) * cin * cout);
          }
        }
  };

  const std::vector<double> packed = repack(wt);
  const Tensor& bv = bias.value();
  Tensor out({width, height, cout});
  for (std::size_t l = 0; l < width * height; ++l)
    for (std::size_t o = 0; o < cout; ++o) out[l * cout + o] = bv[o];
  for_each_tap([&](std::size_t oo, std::size_t io, std::size_t po) {
    double* dst = &out[oo];
    for (std::size_t i = 0; i < cin; ++i) {
      const double x = in[io + i];
      const double* k = &packed[po + i * cout];
      for (std::size_t o = 0; o < cout; ++o) dst[o] += x * k[o];
    }
  });

  return tape.record(
      std::move(out), {input, weight, bias},
      [ii = input.id, wi = weight.id, bi = bias.id, width, height, cin, cout,
       kernel, repack, for_each_tap](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (Tensor* gb = t.grad_target(bi)) {
          for (std::size_t l = 0; l < width * height; ++l)
            for (std::size_t o = 0; o < cout; ++o) (*gb)[o] += g[l * cout + o];
        }
        Tensor* gi = t.grad_target(ii);
        Tensor* gw = t.grad_target(wi);
        if (!gi && !gw) return;
        const Tensor& in = t.value(ii);
        const std::vector<double> packed = repack(t.value(wi));
        std::vector<double> gpacked(gw ? packed.size() : 0, 0.0);
        for_each_tap([&](std::size_t oo, std::size_t io, std::size_t po) {
          const double* go = g.data().data() + oo;
          for (std::size_t i = 0; i < cin; ++i) {
            if (gi) {
              const double* k = &packed[po + i * cout];
              double s = 0.0;
              for (std::size_t o = 0; o < cout; ++o) s += go[o] * k[o];
              (*gi)[io + i] += s;
            }
            if (gw) {
              const double x = in[io + i];
              double* gk = &gpacked[po + i * cout];
              for (std::size_t o = 0; o < cout; ++o) gk[o] += x * go[o];
            }
          }
        });
        if (gw) {
          for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < cin; ++i)
              for (std::size_t a = 0; a < kernel; ++a)
                for (std::size_t b = 0; b < kernel; ++b)
                  (*gw)[((o * cin + i) * kernel + a) * kernel + b] +=
                      gpacked[((a * kernel + b) * cin + i) * cout + o];
        }
      });
}

Var concat(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_rank(a, 1, "concat");
  require_rank(b, 1, "concat");
  const std::size_t na = a.size(), nb = b.size();
  std::vector<double> data(a.value().values());
  data.insert(data.end(), b.value().values().begin(), b.value().values().end());
  return tape.record(Tensor::vector(std::move(data)), {a, b},
                     [ai = a.id, bi = b.id, na, nb](Tape& t, std::size_t self) {
                       const Tensor& g = t.grad(self);
                       if (Tensor* ga = t.grad_target(ai)) {
                         for (std::size_t i = 0; i < na; ++i) (*ga)[i] += g[i];
                       }
                       if (Tensor* gb = t.grad_target(bi)) {
                         for (std::size_t i = 0; i < nb; ++i)
                           (*gb)[i] += g[na + i];
                       }
                     });
}

Var row(Var m, std::size_t index) {
  require_rank(m, 2, "row");
  const Tensor& mv = m.value();
  const std::size_t rows = mv.dim(0), cols = mv.dim(1);
  if (index >= rows) {
    throw DimensionError("row: index " + std::to_string(index) +
                         " out of range for " + shape_to_string(mv.shape()));
  }
  std::vector<double> data(mv.data().begin() + index * cols,
                           mv.data().begin() + (index + 1) * cols);
  return m.tape->record(Tensor::vector(std::move(data)), {m},
                        [mi = m.id, index, cols](Tape& t, std::size_t self) {
                          Tensor* gm = t.grad_target(mi);
                          if (!gm) return;
                          const Tensor& g = t.grad(self);
                          for (std::size_t j = 0; j < cols; ++j)
                            (*gm)[index * cols + j] += g[j];
                        });
}

Var pick(Var v, std::size_t index) {
  require_rank(v, 1, "pick");
  if (index >= v.size()) {
    throw DimensionError("pick: index " + std::to_string(index) +
                         " out of range for " + shape_to_string(v.shape()));
  }
  return v.tape->record(Tensor::scalar(v.value()[index]), {v},
                        [vi = v.id, index](Tape& t, std::size_t self) {
                          if (Tensor* gv = t.grad_target(vi))
                            (*gv)[index] += t.grad(self)[0];
                        });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape->record(Tensor::scalar(total), {x},
                        [xi = x.id](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_target(xi);
                          if (!gx) return;
                          const double g = t.grad(self)[0];
                          for (auto& v : gx->data()) v += g;
                        });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x},
                        [xi = x.id](Tape& t, std::size_t self) {
                          Tensor* gx = t.grad_target(xi);
                          if (!gx) return;
                          const Tensor& g = t.grad(self);
                          for (std::size_t i = 0; i < g.size(); ++i)
                            (*gx)[i] += g[i];
                        });
}

}  // namespace sca
