#pragma once

// Training loop (adaptive-moment optimizer, seeded shuffling, per-epoch JSONL
// log, NaN abort), finite-difference gradient verification, and evaluation at
// the native frame rate.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "cetnet/checkpoint.hpp"
#include "cetnet/io.hpp"
#include "cetnet/loss.hpp"
#include "cetnet/metrics.hpp"
#include "cetnet/model.hpp"
#include "cetnet/rng.hpp"

namespace cetnet {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t epochs = 120;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  double lr_decay = 1.0;   // multiplicative per-epoch factor; 1 disables
  std::uint64_t seed = 0;
  LossConfig loss;
  ModelConfig model;
  std::string checkpoint_path;  // written after the final epoch when nonempty
  std::string log_path;         // per-epoch JSONL log when nonempty

  // learning_rate == 0 is deliberately legal: it turns training into a
  // parameter-preserving dry run, which the determinism diagnostics rely on.
  void validate() const {
    std::vector<std::string> problems;
    if (epochs < 1) problems.push_back("epochs must be >= 1");
    if (!(learning_rate >= 0.0)) problems.push_back("learning_rate must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) problems.push_back("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) problems.push_back("beta2 must be in [0, 1)");
    if (!(adam_epsilon > 0.0)) problems.push_back("adam_epsilon must be > 0");
    if (!(grad_clip >= 0.0)) problems.push_back("grad_clip must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) problems.push_back("lr_decay must be in (0, 1]");
    std::string nested;
    try {
      loss.validate();
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
    try {
      model.validate();
    } catch (const ConfigError& e) {
      problems.push_back(e.what());
    }
    if (!problems.empty()) {
      std::string joined = "invalid TrainConfig:";
      for (const auto& p : problems) joined += " " + p + ";";
      joined.pop_back();
      throw ConfigError(joined);
    }
  }
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double cls = 0.0;
  double mse = 0.0;
  double circle = 0.0;
  double train_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
};

namespace detail {

inline std::string epoch_log_json(const EpochLog& e) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "{\"epoch\": " << e.epoch << ", \"mean_loss\": " << e.mean_loss
      << ", \"cls\": " << e.cls << ", \"mse\": " << e.mse << ", \"circle\": " << e.circle
      << ", \"train_acc\": " << e.train_acc << "}";
  return out.str();
}

inline std::vector<int> argmax_rows(const Tensor& probs) {
  std::vector<int> out(probs.rows());
  const double* p = probs.data();
  const std::size_t c = probs.cols();
  for (std::size_t t = 0; t < probs.rows(); ++t) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (p[t * c + j] > p[t * c + best]) best = j;
    out[t] = static_cast<int>(best);
  }
  return out;
}

// Adaptive moment estimation over the model's parameter registry.
class AdamState {
 public:
  explicit AdamState(const CetModel& model) {
    for (const auto& [name, t] : model.parameters()) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  void step(CetModel& model, const TrainConfig& cfg, double lr) {
    ++t_;
    auto& params = model.parameters();
    double clip_scale = 1.0;
    if (cfg.grad_clip > 0.0) {
      double norm_sq = 0.0;
      for (const auto& [name, p] : params)
        for (double g : p.grad()) norm_sq += g * g;
      const double norm = std::sqrt(norm_sq);
      if (norm > cfg.grad_clip) clip_scale = cfg.grad_clip / norm;
    }
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      Tensor& p = params[pi].second;
      const std::vector<double>& grad = p.grad();
      double* data = p.mutable_data();
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i] * clip_scale;
        m_[pi][i] = cfg.beta1 * m_[pi][i] + (1.0 - cfg.beta1) * g;
        v_[pi][i] = cfg.beta2 * v_[pi][i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = m_[pi][i] / bias1;
        const double v_hat = v_[pi][i] / bias2;
        data[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
      }
    }
  }

 private:
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t t_ = 0;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

inline TrainResult train(CetModel& model, const std::vector<VideoSample>& dataset,
                         const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw DataError("train: empty dataset");
  for (const auto& v : dataset) {
    if (v.features.cols() != model.config().input_dim)
      throw ShapeError(detail::msg("train: video '", v.id, "' has feature width ",
                                   v.features.cols(), ", model expects ",
                                   model.config().input_dim));
    if (v.labels.size() != v.features.rows())
      throw DataError(detail::msg("train: video '", v.id, "' has ", v.features.rows(),
                                  " frames but ", v.labels.size(), " labels"));
  }

  std::ofstream log_file;
  if (!cfg.log_path.empty()) {
    log_file.open(cfg.log_path, std::ios::trunc);
    if (!log_file) throw DataError(detail::msg("cannot write epoch log '", cfg.log_path, "'"));
  }

  detail::AdamState adam(model);
  Rng shuffle_rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainResult result;
  double lr = cfg.learning_rate;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Seeded Fisher-Yates shuffle; the generator persists across epochs so
    // each epoch sees a fresh deterministic order.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

    double loss_sum = 0.0;
    LossParts parts_sum;
    std::size_t correct = 0, total_frames = 0;
    for (std::size_t vi : order) {
      const VideoSample& video = dataset[vi];
      model.zero_grad();
      Tape tape;
      LossParts parts;
      double loss_value = 0.0;
      {
        TapeScope scope(tape);
        StageOutputs stages = model.forward(video.features);
        Tensor loss = combined_loss(stages, video.labels, cfg.loss, nullptr, &parts);
        loss_value = loss.value();
        if (!std::isfinite(loss_value))
          throw Error(detail::msg("training aborted: non-finite loss at epoch ", epoch + 1,
                                  ", video '", video.id, "' (cls=", parts.cls,
                                  ", mse=", parts.smooth, ", circle=", parts.circle, ")"));
        tape.backward(loss);

        const std::vector<int> pred = detail::argmax_rows(stages.probs_per_stage.back());
        for (std::size_t t = 0; t < pred.size(); ++t)
          if (pred[t] == video.labels[t]) ++correct;
        total_frames += pred.size();
      }
      adam.step(model, cfg, lr);
      loss_sum += loss_value;
      parts_sum.cls += parts.cls;
      parts_sum.smooth += parts.smooth;
      parts_sum.circle += parts.circle;
    }

    const double n = static_cast<double>(dataset.size());
    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.mean_loss = loss_sum / n;
    entry.cls = parts_sum.cls / n;
    entry.mse = parts_sum.smooth / n;
    entry.circle = parts_sum.circle / n;
    entry.train_acc =
        total_frames == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(total_frames);
    result.log.push_back(entry);
    if (log_file) log_file << detail::epoch_log_json(entry) << "\n" << std::flush;

    lr *= cfg.lr_decay;
  }

  if (!cfg.checkpoint_path.empty()) save_checkpoint(model, cfg.checkpoint_path);
  return result;
}

// ---------------------------------------------------------------------------
// gradient verification
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed = false;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares the analytic gradient of the combined loss against central
// differences on a random parameter subset. The smoothing term pins the
// previous-frame log-probs at their base-point values so the loss stays a
// plain function under perturbation; at the base point its value and
// gradient match the production loss exactly.
inline GradCheckReport grad_check(CetModel& model, const VideoSample& sample,
                                  const LossConfig& loss_cfg, double tolerance = 1e-4,
                                  std::size_t num_params = 200, double h = 1e-5,
                                  std::uint64_t seed = 1234) {
  loss_cfg.validate();
  if (sample.labels.size() != sample.features.rows())
    throw DataError("grad_check: labels do not match feature rows");

  // Base-point forward to freeze the smoothing term's previous-frame block.
  const std::size_t t_len = sample.features.rows();
  const std::size_t c = model.config().num_classes;
  std::vector<std::vector<double>> frozen_prev;
  {
    StageOutputs base = model.forward(sample.features);
    for (std::size_t si = 0; si < base.num_stages(); ++si) {
      Tensor lp = log_softmax_rows(base.logits_per_stage[si]);
      std::vector<double> block;
      if (t_len >= 2)
        block.assign(lp.data(), lp.data() + (t_len - 1) * c);
      frozen_prev.push_back(std::move(block));
    }
  }

  auto eval_loss = [&]() -> Tensor {
    StageOutputs stages = model.forward(sample.features);
    Tensor total;
    for (std::size_t si = 0; si < stages.num_stages(); ++si) {
      Tensor stage_loss = cls_loss(stages.logits_per_stage[si], sample.labels);
      if (loss_cfg.lambda > 0 && t_len >= 2) {
        Tensor sm = smooth_loss_frozen_prev(log_softmax_rows(stages.logits_per_stage[si]),
                                            frozen_prev[si], loss_cfg.tau);
        stage_loss = add(stage_loss, scale(sm, loss_cfg.lambda));
      }
      if (loss_cfg.beta > 0) {
        Tensor ci = circle_loss(stages.features_per_stage[si],
                                stages.cls_weight_per_stage[si], sample.labels,
                                loss_cfg.gamma, loss_cfg.margin);
        stage_loss = add(stage_loss, scale(ci, loss_cfg.beta));
      }
      total = (si == 0) ? stage_loss : add(total, stage_loss);
    }
    return total;
  };

  // Analytic gradients.
  model.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = eval_loss();
    tape.backward(loss);
  }

  auto& params = model.parameters();
  std::size_t total_params = 0;
  for (const auto& [name, p] : params) total_params += p.size();
  const std::size_t n = std::min(num_params, total_params);

  std::vector<std::size_t> flat(total_params);
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i)
    std::swap(flat[i], flat[i + rng.uniform_index(flat.size() - i)]);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t idx = flat[k];
    std::size_t pi = 0;
    while (idx >= params[pi].second.size()) idx -= params[pi++].second.size();
    Tensor& p = params[pi].second;
    const double analytic = p.grad()[idx];

    double* data = p.mutable_data();
    const double saved = data[idx];
    data[idx] = saved + h;
    const double f_plus = eval_loss().value();
    data[idx] = saved - h;
    const double f_minus = eval_loss().value();
    data[idx] = saved;

    const double numeric = (f_plus - f_minus) / (2.0 * h);
    const double rel =
        std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    ++report.checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = params[pi].first;
      report.worst_index = idx;
      report.worst_analytic = analytic;
      report.worst_numeric = numeric;
    }
  }
  report.passed = report.max_rel_err < tolerance;
  return report;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

// Per-frame class ids for native-rate features: subsample by frame_step,
// forward, argmax of the final stage, upsample back to the native length.
inline std::vector<int> predict(const CetModel& model, const Tensor& native_features,
                                std::size_t frame_step = 1) {
  if (frame_step < 1) throw ConfigError("predict: frame_step must be >= 1");
  const std::size_t t_len = native_features.rows();
  Tensor input = native_features;
  if (frame_step > 1) {
    const std::size_t d = native_features.cols();
    const std::size_t kept = (t_len + frame_step - 1) / frame_step;
    input = Tensor({kept, d});
    double* dst = input.mutable_data();
    const double* src = native_features.data();
    for (std::size_t i = 0; i < kept; ++i)
      for (std::size_t j = 0; j < d; ++j) dst[i * d + j] = src[i * frame_step * d + j];
  }
  StageOutputs stages = model.forward(input);
  std::vector<int> pred = detail::argmax_rows(stages.probs_per_stage.back());
  return frame_step == 1 ? pred : upsample_predictions(pred, frame_step, t_len);
}

// Scores a model over native-rate videos. Side-effect free on the model: no
// tape is active, so forwards neither record nor touch gradient state.
inline MetricReport evaluate(const CetModel& model, const std::vector<VideoSample>& videos,
                             std::size_t frame_step = 1, const EvalOptions& opts = {}) {
  if (videos.empty()) throw DataError("evaluate: empty dataset");
  std::vector<std::pair<std::vector<int>, std::vector<int>>> pairs;  // (pred, gt)
  for (const auto& v : videos)
    pairs.emplace_back(predict(model, v.features, frame_step), v.labels);
  return evaluate_corpus(pairs, opts);
}

}  // namespace cetnet
