#pragma once

// Self-attention building block: dilated feed-forward, instance norm,
// scaled dot-product attention with a pluggable value source, 1x1 output
// projection, layer norm, and a residual connection from the block input.

#include <cmath>
#include <cstddef>
#include <vector>

#include "cetnet/rng.hpp"
#include "cetnet/tensor.hpp"

namespace cetnet {

// ---------------------------------------------------------------------------
// parameter bundles
// ---------------------------------------------------------------------------

struct AttentionParams {
  Tensor w_q;  // C x (C/r)
  Tensor w_k;  // C x (C/r)
  Tensor w_v;  // C x (C/r)
  Tensor w_out;  // (C/r) x C, the 1x1 projection back to block width
  std::size_t r = 1;
  std::size_t heads = 1;
  // Attention window in frames; 0 means unlimited (full T x T attention).
  // When positive, query t only attends to keys s with |t - s| <= window.
  std::size_t window = 0;
};

struct BlockParams {
  Tensor conv_w;  // 3 x C x C dilated feed-forward kernel
  Tensor conv_b;  // C
  Tensor in_gamma;  // C, instance-norm affine
  Tensor in_beta;   // C
  AttentionParams att;
  Tensor ln_gamma;  // C, layer-norm affine
  Tensor ln_beta;   // C
  long dilation = 1;  // 2^i for block index i
};

// ---------------------------------------------------------------------------
// seeded initialization
// ---------------------------------------------------------------------------

// Centered uniform scaled by 1/sqrt(fan_in); biases and shifts start at zero,
// normalization gains at one.
inline Tensor init_weight(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ConfigError("init_weight: fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(shape));
  double* data = t.mutable_data();
  for (std::size_t i = 0; i < t.size(); ++i) data[i] = rng.uniform(-bound, bound);
  return t;
}

inline AttentionParams init_attention(std::size_t channels, std::size_t r, std::size_t heads,
                                      std::size_t window, Rng& rng) {
  if (r == 0 || heads == 0)
    throw ConfigError("init_attention: r and heads must be positive");
  if (channels % (r * heads) != 0)
    throw ConfigError(detail::msg("init_attention: channels=", channels,
                                  " must be divisible by r*heads=", r * heads));
  AttentionParams p;
  const std::size_t proj = channels / r;
  p.w_q = init_weight({channels, proj}, channels, rng);
  p.w_k = init_weight({channels, proj}, channels, rng);
  p.w_v = init_weight({channels, proj}, channels, rng);
  p.w_out = init_weight({proj, channels}, proj, rng);
  p.r = r;
  p.heads = heads;
  p.window = window;
  return p;
}

inline BlockParams init_block(std::size_t channels, long dilation, std::size_t r,
                              std::size_t heads, std::size_t window, Rng& rng) {
  BlockParams b;
  b.conv_w = init_weight({3, channels, channels}, 3 * channels, rng);
  b.conv_b = Tensor({channels});
  b.in_gamma = Tensor::full({channels}, 1.0);
  b.in_beta = Tensor({channels});
  b.att = init_attention(channels, r, heads, window, rng);
  b.ln_gamma = Tensor::full({channels}, 1.0);
  b.ln_beta = Tensor({channels});
  b.dilation = dilation;
  return b;
}

// ---------------------------------------------------------------------------
// forward operations
// ---------------------------------------------------------------------------

// Eq. 2: X'' = In(FFN(X')) with FFN = dilated conv (k=3) + ReLU.
inline Tensor feed_forward(const Tensor& x, const BlockParams& block) {
  Tensor h = dilated_conv1d(x, block.conv_w, block.conv_b, block.dilation);
  return instance_norm(relu(h), block.in_gamma, block.in_beta);
}

namespace detail {

// Additive mask with 0 inside the window band and a large negative constant
// outside; softmax then assigns those keys vanishing weight.
inline Tensor window_mask(std::size_t t, std::size_t window) {
  Tensor mask({t, t});
  double* m = mask.mutable_data();
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      const std::size_t gap = i > j ? i - j : j - i;
      if (gap > window) m[i * t + j] = -1e30;
    }
  return mask;
}

}  // namespace detail

// Eq. 3-4: Att = softmax(Q K^T / sqrt(d_k)) V with Q = q_in W_q,
// K = kv_in W_k, V = v_in W_v. Heads split the C/r projection dimension
// evenly and concatenate their outputs. Optionally captures the attention
// weight matrices (one per head) for inspection.
inline Tensor scaled_dot_attention(const Tensor& q_in, const Tensor& kv_in, const Tensor& v_in,
                                   const AttentionParams& p,
                                   std::vector<Tensor>* attn_out = nullptr) {
  if (q_in.rank() != 2 || kv_in.rank() != 2 || v_in.rank() != 2)
    throw ShapeError("scaled_dot_attention: inputs must be rank-2 [T x C]");
  const std::size_t t = q_in.rows();
  if (kv_in.rows() != t || v_in.rows() != t)
    throw ShapeError(detail::msg("scaled_dot_attention: inputs disagree on T: ", q_in.rows(),
                                 " vs ", kv_in.rows(), " vs ", v_in.rows()));
  const std::size_t proj = p.w_q.cols();
  if (p.heads == 0 || proj % p.heads != 0)
    throw ConfigError(detail::msg("scaled_dot_attention: projection dim ", proj,
                                  " is not divisible by heads=", p.heads));

  Tensor q = matmul(q_in, p.w_q);
  Tensor k = matmul(kv_in, p.w_k);
  Tensor v = matmul(v_in, p.w_v);

  const std::size_t head_dim = proj / p.heads;
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor mask;
  const bool windowed = p.window > 0 && p.window + 1 < t;
  if (windowed) mask = detail::window_mask(t, p.window);

  Tensor out;
  for (std::size_t h = 0; h < p.heads; ++h) {
    const std::size_t c0 = h * head_dim;
    const std::size_t c1 = c0 + head_dim;
    Tensor qh = p.heads == 1 ? q : slice_cols(q, c0, c1);
    Tensor kh = p.heads == 1 ? k : slice_cols(k, c0, c1);
    Tensor vh = p.heads == 1 ? v : slice_cols(v, c0, c1);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    if (windowed) scores = add(scores, mask);
    Tensor weights = softmax_rows(scores);
    if (attn_out) attn_out->push_back(weights);
    Tensor head = matmul(weights, vh);
    out = (h == 0) ? head : concat_channels(out, head);
  }
  return out;
}

// Eq. 5: F = LN(1x1(Att)) + X', with the residual taken from the block
// input. The value source is the block's own x'' in encoder mode and the
// supplied cross_v tensor in decoder (cross-attention) mode.
inline Tensor self_attention_block(const Tensor& x, const Tensor* cross_v,
                                   const BlockParams& block,
                                   std::vector<Tensor>* attn_out = nullptr) {
  if (cross_v && (cross_v->rank() != 2 || cross_v->rows() != x.rows() ||
                  cross_v->cols() != x.cols()))
    throw ShapeError(detail::msg("self_attention_block: cross value shape ",
                                 detail::shape_str(cross_v->shape()),
                                 " does not match input ", detail::shape_str(x.shape())));
  Tensor xpp = feed_forward(x, block);
  const Tensor& v_src = cross_v ? *cross_v : xpp;
  Tensor att = scaled_dot_attention(xpp, xpp, v_src, block.att, attn_out);
  Tensor projected = matmul(att, block.att.w_out);
  return add(layer_norm(projected, block.ln_gamma, block.ln_beta), x);
}

inline Tensor self_attention_block(const Tensor& x, const BlockParams& block,
                                   std::vector<Tensor>* attn_out = nullptr) {
  return self_attention_block(x, nullptr, block, attn_out);
}

// Collects every trainable tensor of a block under the given name prefix.
// Ordering is stable; the model's parameter registry and the checkpoint
// format both rely on it.
inline void collect_block_params(const BlockParams& b, const std::string& prefix,
                                 std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".conv_w", b.conv_w);
  out.emplace_back(prefix + ".conv_b", b.conv_b);
  out.emplace_back(prefix + ".in_gamma", b.in_gamma);
  out.emplace_back(prefix + ".in_beta", b.in_beta);
  out.emplace_back(prefix + ".att.w_q", b.att.w_q);
  out.emplace_back(prefix + ".att.w_k", b.att.w_k);
  out.emplace_back(prefix + ".att.w_v", b.att.w_v);
  out.emplace_back(prefix + ".att.w_out", b.att.w_out);
  out.emplace_back(prefix + ".ln_gamma", b.ln_gamma);
  out.emplace_back(prefix + ".ln_beta", b.ln_beta);
}

}  // namespace cetnet
