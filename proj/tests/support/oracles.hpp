// Independent reference implementations used as test oracles. Everything in
// this header is deliberately naive (direct summation, full DP matrices,
// exhaustive search) and shares no code with the library paths it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cetnet/tensor.hpp"

namespace oracles {

// ---------------------------------------------------------------------------
// Central finite differences
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double rel_err(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Compares analytic gradients of `f` (a scalar function of `params`
/// evaluated under an active tape) against central differences. Perturbs
/// every component of every parameter unless `indices` narrows the set to
/// (param_idx, flat_idx) pairs.
inline GradCheckResult finite_difference_check(
    const std::vector<cetnet::Tensor>& params,
    const std::function<cetnet::Tensor()>& f, double h = 1e-5,
    const std::vector<std::pair<std::size_t, std::size_t>>& indices = {}) {
  using cetnet::Tape;
  using cetnet::TapeScope;

  for (const auto& p : params) {
    if (!p.requires_grad()) throw std::logic_error("oracle: param without requires_grad");
    const_cast<cetnet::Tensor&>(p).zero_grad();
  }

  Tape tape;
  {
    TapeScope scope(tape);
    cetnet::Tensor loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  std::vector<std::pair<std::size_t, std::size_t>> todo = indices;
  if (todo.empty()) {
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      for (std::size_t i = 0; i < params[pi].size(); ++i) todo.emplace_back(pi, i);
  }

  GradCheckResult result;
  for (auto [pi, i] : todo) {
    double* slot = const_cast<cetnet::Tensor&>(params[pi]).mutable_data() + i;
    const double saved = *slot;
    *slot = saved + h;
    const double fp = f().value();
    *slot = saved - h;
    const double fm = f().value();
    *slot = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = rel_err(analytic[pi][i], numeric);
    if (err > result.max_rel_err) {
      result.max_rel_err = err;
      result.worst_param = pi;
      result.worst_index = i;
      result.worst_analytic = analytic[pi][i];
      result.worst_numeric = numeric;
    }
    ++result.checked;
  }
  return result;
}

/// Scalar probe loss sum_ij w_ij * y_ij built from on-tape ops, for gradient
/// checks where a plain sum() would be blind to part of the computation
/// (e.g. layer-norm outputs, whose rows sum to a constant). The weight tensor
/// must be a constant with the same shape as y, fixed across evaluations.
inline cetnet::Tensor weighted_sum(const cetnet::Tensor& y, const cetnet::Tensor& w) {
  using cetnet::Tensor;
  if (y.shape() != w.shape())
    throw cetnet::ShapeError("weighted_sum: probe weights must match the output shape");
  Tensor total;
  for (std::size_t j = 0; j < y.cols(); ++j) {
    Tensor term = cetnet::matmul(cetnet::transpose(cetnet::slice_cols(y, j, j + 1)),
                                 cetnet::slice_cols(w, j, j + 1));
    total = (j == 0) ? term : cetnet::add(total, term);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Naive numeric references
// ---------------------------------------------------------------------------

/// Direct triple-loop matrix product.
inline std::vector<double> naive_matmul(const std::vector<double>& a,
                                        const std::vector<double>& b,
                                        std::size_t m, std::size_t k, std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t kk = 0; kk < k; ++kk)
        out[i * n + j] += a[i * k + kk] * b[kk * n + j];
  return out;
}

/// Direct O(T*k) kernel-3 dilated convolution with zero padding.
/// w layout [3 x cin x cout].
inline std::vector<double> naive_dilated_conv(const std::vector<double>& x,
                                              const std::vector<double>& w,
                                              const std::vector<double>& b,
                                              long t_len, long cin, long cout,
                                              long dilation) {
  std::vector<double> y(static_cast<std::size_t>(t_len * cout), 0.0);
  for (long t = 0; t < t_len; ++t) {
    for (long o = 0; o < cout; ++o) {
      double acc = b[static_cast<std::size_t>(o)];
      for (long j = 0; j < 3; ++j) {
        const long src = t + (j - 1) * dilation;
        if (src < 0 || src >= t_len) continue;
        for (long i = 0; i < cin; ++i)
          acc += x[static_cast<std::size_t>(src * cin + i)] *
                 w[static_cast<std::size_t>((j * cin + i) * cout + o)];
      }
      y[static_cast<std::size_t>(t * cout + o)] = acc;
    }
  }
  return y;
}

// ---------------------------------------------------------------------------
// Metric oracles
// ---------------------------------------------------------------------------

/// Full-matrix Levenshtein distance.
inline std::size_t dp_levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t m = a.size(), n = b.size();
  std::vector<std::vector<std::size_t>> d(m + 1, std::vector<std::size_t>(n + 1, 0));
  for (std::size_t i = 0; i <= m; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= n; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= m; ++i) {
    for (std::size_t j = 1; j <= n; ++j) {
      const std::size_t sub = d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, sub});
    }
  }
  return d[m][n];
}

struct OracleSegment {
  int label;
  std::size_t start;  // inclusive
  std::size_t end;    // exclusive
};

inline std::vector<OracleSegment> run_length(const std::vector<int>& labels) {
  std::vector<OracleSegment> segs;
  std::size_t start = 0;
  for (std::size_t t = 1; t <= labels.size(); ++t) {
    if (t == labels.size() || labels[t] != labels[start]) {
      segs.push_back({labels[start], start, t});
      start = t;
    }
  }
  return segs;
}

inline double seg_iou(const OracleSegment& a, const OracleSegment& b) {
  const double inter = static_cast<double>(
      std::max<long>(0, static_cast<long>(std::min(a.end, b.end)) -
                            static_cast<long>(std::max(a.start, b.start))));
  const double uni = static_cast<double>(std::max(a.end, b.end) - std::min(a.start, b.start));
  return uni > 0.0 ? inter / uni : 0.0;
}

/// Maximum number of prediction<->ground-truth matches over all one-to-one
/// assignments where a pair qualifies (same label, IoU >= tau). Exhaustive
/// recursion; fine for the small instances used in tests.
inline std::size_t best_matching_tp(const std::vector<OracleSegment>& pred,
                                    const std::vector<OracleSegment>& gt,
                                    double tau) {
  std::vector<std::vector<std::size_t>> candidates(pred.size());
  for (std::size_t p = 0; p < pred.size(); ++p)
    for (std::size_t g = 0; g < gt.size(); ++g)
      if (pred[p].label == gt[g].label && seg_iou(pred[p], gt[g]) >= tau)
        candidates[p].push_back(g);

  std::vector<bool> used(gt.size(), false);
  std::function<std::size_t(std::size_t)> go = [&](std::size_t p) -> std::size_t {
    if (p == pred.size()) return 0;
    std::size_t best = go(p + 1);  // leave p unmatched
    for (std::size_t g : candidates[p]) {
      if (used[g]) continue;
      used[g] = true;
      best = std::max(best, 1 + go(p + 1));
      used[g] = false;
    }
    return best;
  };
  return go(0);
}

/// True when some label appears more than once in either segment list;
/// greedy matching may then legitimately differ from the optimum.
inline bool has_duplicate_labels(const std::vector<OracleSegment>& pred,
                                 const std::vector<OracleSegment>& gt) {
  auto dup = [](const std::vector<OracleSegment>& segs) {
    std::vector<int> labels;
    for (const auto& s : segs) labels.push_back(s.label);
    std::sort(labels.begin(), labels.end());
    return std::adjacent_find(labels.begin(), labels.end()) != labels.end();
  };
  return dup(pred) || dup(gt);
}

// ---------------------------------------------------------------------------
// Loss oracles
// ---------------------------------------------------------------------------

/// Per-frame mean of -log softmax(true class), direct summation.
inline double naive_cls_loss(const std::vector<double>& logits, std::size_t t_len,
                             std::size_t c, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    double mx = logits[t * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits[t * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(logits[t * c + j] - mx);
    const double logp = logits[t * c + static_cast<std::size_t>(labels[t])] - mx - std::log(z);
    total -= logp;
  }
  return total / static_cast<double>(t_len);
}

/// Brute-force double loop over frames and classes of the clamped squared
/// log-prob deltas.
inline double naive_smooth_loss(const std::vector<double>& log_probs,
                                std::size_t t_len, std::size_t c, double tau) {
  if (t_len < 2) return 0.0;
  double total = 0.0;
  for (std::size_t t = 1; t < t_len; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      const double delta = std::abs(log_probs[t * c + j] - log_probs[(t - 1) * c + j]);
      const double clamped = std::min(delta, tau);
      total += clamped * clamped;
    }
  }
  return total / (static_cast<double>(t_len - 1) * static_cast<double>(c));
}

/// Literal double-sum evaluation over (positive, negative) pairs per frame,
/// averaged over frames. Scores are per-class similarity values.
inline double naive_circle_loss(const std::vector<double>& scores, std::size_t t_len,
                                std::size_t c, const std::vector<int>& labels,
                                double gamma, double margin) {
  const double delta_p = 1.0 - margin;
  const double delta_n = margin;
  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    const std::size_t y = static_cast<std::size_t>(labels[t]);
    const double sp = scores[t * c + y];
    const double alpha_p = std::max(0.0, 1.0 + margin - sp);
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == y) continue;
      const double sn = scores[t * c + j];
      const double alpha_n = std::max(0.0, sn + margin);
      acc += std::exp(gamma * alpha_n * (sn - delta_n) + gamma * alpha_p * (delta_p - sp));
    }
    total += std::log1p(acc);
  }
  return total / static_cast<double>(t_len);
}

inline double naive_cosine(const std::vector<double>& a, const std::vector<double>& b,
                           double eps = 1e-12) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::max(std::sqrt(na), eps) / std::max(std::sqrt(nb), eps);
}

}  // namespace oracles
