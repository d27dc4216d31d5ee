#pragma once

#include <cstddef>

#include "sca/tape.hpp"

namespace sca {

// Differentiable primitives. Every op records onto the tape of its inputs and
// throws DimensionError / RankError on malformed shapes.

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // same-shape elementwise product
Var scale(Var a, double factor);

// [k x C] * [C x m] -> [k x m]
Var matmul(Var a, Var b);
// [k x n] * [n] -> [k]
Var matvec(Var a, Var x);
// [k]^T * [k x m] -> [m]
Var vecmat(Var w, Var a);
// [k] (x) [C] -> [k x C]
Var outer(Var u, Var v);

// out[i, j] = m[i, j] + v[i]: v added to every column.
Var broadcast_add_col(Var m, Var v);
// v + s for a single-element s.
Var add_scalar(Var v, Var s);

// Max-subtracted softmax of a rank-1 tensor.
Var softmax(Var z);
Var tanh_map(Var x);
Var sigmoid(Var x);
Var relu(Var x);
Var log_map(Var x);

enum class BroadcastAxis {
  Auto,     // same shape, or a rank-1 operand whose length is unambiguous
  Spatial,  // rank-1 of length W*H, indexed by flattened location
  Channel,  // rank-1 of length C
};

// Elementwise product of a W x H x C map with a same-shape tensor or with a
// vector broadcast along one axis. Auto with W*H == C is rejected.
Var hadamard(Var a, Var b, BroadcastAxis axis = BroadcastAxis::Auto);

// Flattened location index of (w, h) in a W x H grid: h-major, w-minor.
constexpr std::size_t location_index(std::size_t w, std::size_t h,
                                     std::size_t width) {
  return h * width + w;
}

// [W x H x C] -> [C]: per-channel spatial mean.
Var mean_pool_spatial(Var v);
// [W x H x C] -> [C x W*H]; column location_index(w, h, W) is fiber (w, h).
Var flatten_spatial(Var v);
// Inverse of flatten_spatial.
Var unflatten_spatial(Var m, std::size_t width, std::size_t height);
// [W x H x C] -> [W/2 x H/2 x C] mean over 2x2 blocks; W, H even.
Var mean_pool2x2(Var v);

// Same-padded cross-correlation.
// input [W x H x Cin], weight [Cout x Cin x K x K] (kernel axes ordered
// (w-offset, h-offset)), bias [Cout] -> [W x H x Cout]. K must be odd.
Var conv2d_same(Var input, Var weight, Var bias);

// Rank-1 concatenation.
Var concat(Var a, Var b);
// Row `index` of a matrix as a rank-1 tensor.
Var row(Var m, std::size_t index);
// Single entry of a rank-1 tensor as a scalar.
Var pick(Var v, std::size_t index);
// Sum of all entries as a scalar.
Var sum(Var x);
Var reshape(Var x, Shape shape);

}  // namespace sca
