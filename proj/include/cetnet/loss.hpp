#pragma once

// Combined training objective: cross-entropy classification loss, the
// clamped temporal smoothing loss, and circle loss over cosine similarities
// between frame embeddings and classifier weight columns, accumulated over
// every stage of the model.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cetnet/model.hpp"
#include "cetnet/tensor.hpp"

namespace cetnet {

struct LossConfig {
  double lambda = 0.15;  // weight of the smoothing loss
  double beta = 0.001;   // weight of the circle loss
  double tau = 4.0;      // smoothing clamp
  double gamma = 64.0;   // circle-loss scale
  double margin = 0.25;  // circle-loss relaxation m

  void validate() const {
    std::vector<std::string> problems;
    if (lambda < 0) problems.push_back("lambda must be >= 0");
    if (beta < 0) problems.push_back("beta must be >= 0");
    if (!(tau > 0)) problems.push_back("tau must be > 0");
    if (!(gamma > 0)) problems.push_back("gamma must be > 0");
    if (margin < 0 || margin >= 1) problems.push_back("margin must be in [0, 1)");
    if (!problems.empty()) {
      std::string joined = "invalid loss config:";
      for (const auto& p : problems) joined += "\n  - " + p;
      throw ConfigError(joined);
    }
  }
};

namespace detail {

inline void check_labels(const std::vector<int>& labels, std::size_t t_len,
                         std::size_t num_classes, const char* who) {
  if (labels.size() != t_len)
    throw ShapeError(msg(who, ": ", t_len, " frames but ", labels.size(), " labels"));
  for (std::size_t t = 0; t < t_len; ++t)
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= num_classes)
      throw DataError(msg(who, ": label ", labels[t], " at frame ", t,
                          " is outside [0, ", num_classes, ")"));
}

inline double stable_sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

inline double stable_softplus(double u) {
  if (u > 0.0) return u + std::log1p(std::exp(-u));
  return std::log1p(std::exp(u));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// classification loss
// ---------------------------------------------------------------------------

// Mean over frames of -log softmax(true class). Optional per-class weights
// turn the mean into a weighted mean (weights default to uniform).
inline Tensor cls_loss(const Tensor& logits, const std::vector<int>& labels,
                       const std::vector<double>& class_weights = {}) {
  if (logits.rank() != 2) throw ShapeError("cls_loss: logits must be [T x c]");
  const std::size_t t_len = logits.rows();
  const std::size_t c = logits.cols();
  detail::check_labels(labels, t_len, c, "cls_loss");
  if (!class_weights.empty() && class_weights.size() != c)
    throw ShapeError(detail::msg("cls_loss: ", class_weights.size(), " class weights for ",
                                 c, " classes"));

  const double* x = logits.data();
  std::vector<double> frame_weight(t_len, 1.0);
  if (!class_weights.empty())
    for (std::size_t t = 0; t < t_len; ++t)
      frame_weight[t] = class_weights[static_cast<std::size_t>(labels[t])];
  double weight_sum = 0.0;
  for (double w : frame_weight) weight_sum += w;
  if (weight_sum <= 0.0) throw ConfigError("cls_loss: class weights sum to zero over batch");

  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    double mx = x[t * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[t * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(x[t * c + j] - mx);
    const double logp =
        x[t * c + static_cast<std::size_t>(labels[t])] - mx - std::log(z);
    total -= frame_weight[t] * logp;
  }
  Tensor out = Tensor::scalar(total / weight_sum);

  if (Tape* tape = detail::recording(logits.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [xi = logits.impl(), oi = out.impl(), labels, frame_weight,
                              weight_sum, t_len, c] {
      const double g = oi->grad[0];
      auto& grad = xi->grad_buffer();
      for (std::size_t t = 0; t < t_len; ++t) {
        const double* row = xi->data.data() + t * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double scale = g * frame_weight[t] / weight_sum;
        for (std::size_t j = 0; j < c; ++j) {
          const double p = std::exp(row[j] - mx) / z;
          grad[t * c + j] += scale * (p - (static_cast<std::size_t>(labels[t]) == j));
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// smoothing loss
// ---------------------------------------------------------------------------

namespace detail {

// Shared core: mean over (T-1)*c of min(|lp[t] - prev[t-1]|, tau)^2 where
// `prev` is treated as a constant (no gradient through the previous frame).
// `frozen_prev`, when nonempty, supplies those constants explicitly; the
// production path reads them live from the input tensor.
inline Tensor smooth_loss_impl(const Tensor& log_probs, double tau,
                               const std::vector<double>& frozen_prev,
                               bool* degenerate) {
  if (log_probs.rank() != 2) throw ShapeError("smooth_loss: log_probs must be [T x c]");
  if (!(tau > 0)) throw ConfigError("smooth_loss: tau must be > 0");
  const std::size_t t_len = log_probs.rows();
  const std::size_t c = log_probs.cols();
  if (degenerate) *degenerate = t_len < 2;
  if (t_len < 2) return Tensor::scalar(0.0);
  if (!frozen_prev.empty() && frozen_prev.size() != (t_len - 1) * c)
    throw ShapeError(msg("smooth_loss: frozen previous-frame block has ",
                         frozen_prev.size(), " values, expected ", (t_len - 1) * c));

  const double* x = log_probs.data();
  const double denom = static_cast<double>(t_len - 1) * static_cast<double>(c);
  double total = 0.0;
  for (std::size_t t = 1; t < t_len; ++t)
    for (std::size_t j = 0; j < c; ++j) {
      const double prev =
          frozen_prev.empty() ? x[(t - 1) * c + j] : frozen_prev[(t - 1) * c + j];
      const double d = std::min(std::abs(x[t * c + j] - prev), tau);
      total += d * d;
    }
  Tensor out = Tensor::scalar(total / denom);

  if (Tape* tape = recording(log_probs.needs_grad())) {
    mark(out);
    tape->record(out.impl(), [xi = log_probs.impl(), oi = out.impl(), frozen_prev, tau,
                              t_len, c, denom] {
      const double g = oi->grad[0];
      auto& grad = xi->grad_buffer();
      for (std::size_t t = 1; t < t_len; ++t)
        for (std::size_t j = 0; j < c; ++j) {
          const double prev = frozen_prev.empty() ? xi->data[(t - 1) * c + j]
                                                  : frozen_prev[(t - 1) * c + j];
          const double d = xi->data[t * c + j] - prev;
          if (std::abs(d) < tau) grad[t * c + j] += g * 2.0 * d / denom;
        }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor smooth_loss(const Tensor& log_probs, double tau, bool* degenerate = nullptr) {
  return detail::smooth_loss_impl(log_probs, tau, {}, degenerate);
}

// Variant with the previous-frame log-probs pinned to externally supplied
// constants (row t-1 lives at block offset (t-1)*c). At the pin point its
// value and gradient coincide with the production loss; unlike the
// production loss it stays a plain function of the inputs under
// finite-difference perturbation.
inline Tensor smooth_loss_frozen_prev(const Tensor& log_probs,
                                      const std::vector<double>& frozen_prev, double tau) {
  if (frozen_prev.empty())
    throw ConfigError("smooth_loss_frozen_prev: frozen block must be nonempty");
  return detail::smooth_loss_impl(log_probs, tau, frozen_prev, nullptr);
}

// ---------------------------------------------------------------------------
// circle loss
// ---------------------------------------------------------------------------

inline constexpr double kCosineEpsilon = 1e-12;

// Cosine similarity between every frame embedding (row of `features`) and
// every classifier weight column: scores[t, j] = cos(f_t, w_:,j), with
// epsilon-guarded norms so zero vectors never produce NaN.
inline Tensor cosine_scores(const Tensor& features, const Tensor& weights) {
  if (features.rank() != 2 || weights.rank() != 2)
    throw ShapeError("cosine_scores: expected [T x E] features and [E x c] weights");
  if (features.cols() != weights.rows())
    throw ShapeError(detail::msg("cosine_scores: embedding width ", features.cols(),
                                 " does not match weight rows ", weights.rows()));
  const std::size_t t_len = features.rows();
  const std::size_t e = features.cols();
  const std::size_t c = weights.cols();
  const double* f = features.data();
  const double* w = weights.data();

  std::vector<double> fnorm(t_len), wnorm(c);
  for (std::size_t t = 0; t < t_len; ++t) {
    double n = 0.0;
    for (std::size_t k = 0; k < e; ++k) n += f[t * e + k] * f[t * e + k];
    fnorm[t] = std::max(std::sqrt(n), kCosineEpsilon);
  }
  for (std::size_t j = 0; j < c; ++j) {
    double n = 0.0;
    for (std::size_t k = 0; k < e; ++k) n += w[k * c + j] * w[k * c + j];
    wnorm[j] = std::max(std::sqrt(n), kCosineEpsilon);
  }

  Tensor out({t_len, c});
  double* o = out.mutable_data();
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t j = 0; j < c; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < e; ++k) dot += f[t * e + k] * w[k * c + j];
      o[t * c + j] = dot / fnorm[t] / wnorm[j];
    }

  if (Tape* tape = detail::recording(features.needs_grad() || weights.needs_grad())) {
    detail::mark(out);
    const bool need_f = features.needs_grad();
    const bool need_w = weights.needs_grad();
    tape->record(out.impl(), [fi = features.impl(), wi = weights.impl(), oi = out.impl(),
                              fnorm, wnorm, t_len, e, c, need_f, need_w] {
      const double* f = fi->data.data();
      const double* w = wi->data.data();
      const double* s = oi->data.data();
      const double* go = oi->grad.data();
      for (std::size_t t = 0; t < t_len; ++t) {
        const bool f_live = fnorm[t] > kCosineEpsilon;
        for (std::size_t j = 0; j < c; ++j) {
          const double g = go[t * c + j];
          if (g == 0.0) continue;
          const double inv_d = 1.0 / (fnorm[t] * wnorm[j]);
          const bool w_live = wnorm[j] > kCosineEpsilon;
          if (need_f) {
            auto& gf = fi->grad_buffer();
            for (std::size_t k = 0; k < e; ++k) {
              double d = w[k * c + j] * inv_d;
              if (f_live) d -= s[t * c + j] * f[t * e + k] / (fnorm[t] * fnorm[t]);
              gf[t * e + k] += g * d;
            }
          }
          if (need_w) {
            auto& gw = wi->grad_buffer();
            for (std::size_t k = 0; k < e; ++k) {
              double d = f[t * e + k] * inv_d;
              if (w_live) d -= s[t * c + j] * w[k * c + j] / (wnorm[j] * wnorm[j]);
              gw[k * c + j] += g * d;
            }
          }
        }
      }
    });
  }
  return out;
}

// Circle loss over per-frame class scores. For each frame with true class y:
//   alpha_p = [1 + m - s_p]+      delta_p = 1 - m
//   alpha_n = [s_n + m]+          delta_n = m
//   L = softplus( logsumexp_j( gamma * alpha_n_j * (s_n_j - delta_n) )
//                 + gamma * alpha_p * (delta_p - s_p) )
// averaged over frames. The weights alpha are functions of the scores and
// gradients flow through them.
inline Tensor circle_loss_from_scores(const Tensor& scores, const std::vector<int>& labels,
                                      double gamma, double margin) {
  if (scores.rank() != 2) throw ShapeError("circle_loss: scores must be [T x c]");
  if (!(gamma > 0)) throw ConfigError("circle_loss: gamma must be > 0");
  if (margin < 0 || margin >= 1) throw ConfigError("circle_loss: margin must be in [0, 1)");
  const std::size_t t_len = scores.rows();
  const std::size_t c = scores.cols();
  detail::check_labels(labels, t_len, c, "circle_loss");

  const double delta_p = 1.0 - margin;
  const double delta_n = margin;
  const double* s = scores.data();

  // Forward pass; per-frame u = logsumexp(negatives) + positive exponent is
  // retained implicitly and recomputed in the backward closure.
  auto frame_u = [=](std::size_t t, int y) {
    const double sp = s[t * c + static_cast<std::size_t>(y)];
    const double alpha_p = std::max(0.0, 1.0 + margin - sp);
    const double b = gamma * alpha_p * (delta_p - sp);
    double mx = -1e300;
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == static_cast<std::size_t>(y)) continue;
      const double sn = s[t * c + j];
      const double a = gamma * std::max(0.0, sn + margin) * (sn - delta_n);
      mx = std::max(mx, a);
      any = true;
    }
    if (!any) return std::pair<double, bool>{0.0, false};
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == static_cast<std::size_t>(y)) continue;
      const double sn = s[t * c + j];
      const double a = gamma * std::max(0.0, sn + margin) * (sn - delta_n);
      z += std::exp(a - mx);
    }
    return std::pair<double, bool>{mx + std::log(z) + b, true};
  };

  double total = 0.0;
  for (std::size_t t = 0; t < t_len; ++t) {
    auto [u, has_negatives] = frame_u(t, labels[t]);
    if (has_negatives) total += detail::stable_softplus(u);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(t_len));

  if (Tape* tape = detail::recording(scores.needs_grad())) {
    detail::mark(out);
    tape->record(out.impl(), [si = scores.impl(), oi = out.impl(), labels, gamma, margin,
                              delta_p, delta_n, t_len, c] {
      const double g = oi->grad[0] / static_cast<double>(t_len);
      const double* s = si->data.data();
      auto& grad = si->grad_buffer();
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::size_t y = static_cast<std::size_t>(labels[t]);
        const double sp = s[t * c + y];
        const double alpha_p = std::max(0.0, 1.0 + margin - sp);
        const double b = gamma * alpha_p * (delta_p - sp);

        double mx = -1e300;
        bool any = false;
        for (std::size_t j = 0; j < c; ++j) {
          if (j == y) continue;
          const double sn = s[t * c + j];
          const double a = gamma * std::max(0.0, sn + margin) * (sn - delta_n);
          mx = std::max(mx, a);
          any = true;
        }
        if (!any) continue;
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          if (j == y) continue;
          const double sn = s[t * c + j];
          const double a = gamma * std::max(0.0, sn + margin) * (sn - delta_n);
          z += std::exp(a - mx);
        }
        const double u = mx + std::log(z) + b;
        const double sig = detail::stable_sigmoid(u);

        // d u / d s_p: through alpha_p (where active) and the -s_p factor.
        double db = -gamma * alpha_p;
        if (1.0 + margin - sp > 0.0) db -= gamma * (delta_p - sp);
        grad[t * c + y] += g * sig * db;

        // d u / d s_n_j = softmax_j(a) * d a_j / d s_n_j.
        for (std::size_t j = 0; j < c; ++j) {
          if (j == y) continue;
          const double sn = s[t * c + j];
          const double alpha_n = std::max(0.0, sn + margin);
          const double a = gamma * alpha_n * (sn - delta_n);
          const double soft = std::exp(a - mx) / z;
          double da = gamma * alpha_n;
          if (sn + margin > 0.0) da += gamma * (sn - delta_n);
          grad[t * c + j] += g * sig * soft * da;
        }
      }
    });
  }
  return out;
}

// Classification form: cosine similarities between frame embeddings and
// classifier weight columns feed the score-level loss.
inline Tensor circle_loss(const Tensor& features, const Tensor& classifier_weights,
                          const std::vector<int>& labels, double gamma, double margin) {
  return circle_loss_from_scores(cosine_scores(features, classifier_weights), labels, gamma,
                                 margin);
}

// ---------------------------------------------------------------------------
// combined objective
// ---------------------------------------------------------------------------

// Unweighted per-term sums across stages, for logging and diagnostics.
struct LossParts {
  double cls = 0.0;
  double smooth = 0.0;
  double circle = 0.0;
};

// Eq. 9 accumulated over stages: sum_s [ cls + lambda * smooth + beta * circle ].
// Zero-weight terms are skipped entirely. `degenerate` (optional) reports
// that the smoothing term was dropped because the video has fewer than two
// frames; `parts` (optional) receives the unweighted term sums.
inline Tensor combined_loss(const StageOutputs& stages, const std::vector<int>& labels,
                            const LossConfig& cfg, bool* degenerate = nullptr,
                            LossParts* parts = nullptr) {
  cfg.validate();
  if (stages.num_stages() == 0) throw ConfigError("combined_loss: no stages");
  if (degenerate) *degenerate = false;
  if (parts) *parts = LossParts{};
  Tensor total;
  for (std::size_t si = 0; si < stages.num_stages(); ++si) {
    Tensor stage_loss = cls_loss(stages.logits_per_stage[si], labels);
    if (parts) parts->cls += stage_loss.value();
    if (cfg.lambda > 0) {
      bool deg = false;
      Tensor sm = smooth_loss(log_softmax_rows(stages.logits_per_stage[si]), cfg.tau, &deg);
      if (deg && degenerate) *degenerate = true;
      if (parts) parts->smooth += sm.value();
      stage_loss = add(stage_loss, scale(sm, cfg.lambda));
    }
    if (cfg.beta > 0) {
      Tensor ci = circle_loss(stages.features_per_stage[si], stages.cls_weight_per_stage[si],
                              labels, cfg.gamma, cfg.margin);
      if (parts) parts->circle += ci.value();
      stage_loss = add(stage_loss, scale(ci, cfg.beta));
    }
    total = (si == 0) ? stage_loss : add(total, stage_loss);
  }
  return total;
}

}  // namespace cetnet
