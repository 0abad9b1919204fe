#pragma once

#include <vector>

#include "vlpre/rng.hpp"
#include "vlpre/tensor.hpp"

namespace vlpre {

enum class Mode { train, eval };
enum class Reduction { mean, sum };

namespace ops {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);  // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
// x: [m,n], bias: [n], added to every row
Tensor add_row_bias(const Tensor& x, const Tensor& bias);
// x·w + b with w: [in,out], b: [out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor gelu(const Tensor& x);  // exact erf form
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Normalizes over the last axis (length = gain length, must be >= 2).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

Tensor softmax_rows(const Tensor& x);
// mean (or sum) of -log softmax(logits)[label] over rows
Tensor softmax_ce(const Tensor& logits, const std::vector<int>& labels,
                  Reduction r = Reduction::mean);
// p in (0,1) clamped to [1e-12, 1-1e-12], y in {0,1}
Tensor binary_ce(const Tensor& p, const std::vector<int>& y, Reduction r = Reduction::mean);
// sum of squared elementwise differences (= sum over rows of ||a_i - b_i||^2)
Tensor l2_loss(const Tensor& a, const Tensor& b);

// rows of table selected by ids; backward scatter-adds
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
Tensor slice_cols(const Tensor& x, int start, int width);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Inverted dropout: eval mode is the identity, train mode zeroes with
// probability p and rescales survivors by 1/(1-p). The mask is a constant
// with respect to differentiation.
Tensor dropout(const Tensor& x, double p, Mode mode, Rng& rng);

}  // namespace ops
}  // namespace vlpre
