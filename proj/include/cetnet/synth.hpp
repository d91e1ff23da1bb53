#pragma once

// Synthetic dataset generator: Markov-chain action sequences with uniform
// segment durations, Gaussian feature emissions around per-class mean
// vectors. Everything is deterministic given (config, seed).

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cetnet/io.hpp"
#include "cetnet/rng.hpp"
#include "cetnet/tensor.hpp"

namespace cetnet {

struct SynthConfig {
  std::size_t num_classes = 5;
  std::size_t feature_dim = 16;
  std::size_t min_segment_len = 20;
  std::size_t max_segment_len = 60;
  std::size_t segments_per_video = 8;
  std::uint64_t transition_seed = 7;
  double noise_sigma = 0.8;
  std::size_t train_videos = 20;
  std::size_t test_videos = 5;

  void validate() const {
    std::vector<std::string> problems;
    if (num_classes < 2) problems.push_back("num_classes must be >= 2");
    if (feature_dim < 1) problems.push_back("feature_dim must be >= 1");
    if (min_segment_len < 1) problems.push_back("min_segment_len must be >= 1");
    if (max_segment_len < min_segment_len)
      problems.push_back("max_segment_len must be >= min_segment_len");
    if (segments_per_video < 1) problems.push_back("segments_per_video must be >= 1");
    if (!(noise_sigma >= 0.0)) problems.push_back("noise_sigma must be >= 0");
    if (train_videos < 1) problems.push_back("train_videos must be >= 1");
    if (test_videos < 1) problems.push_back("test_videos must be >= 1");
    if (!problems.empty()) {
      std::string joined = "invalid SynthConfig:";
      for (const auto& p : problems) joined += " " + p + ";";
      joined.pop_back();
      throw ConfigError(joined);
    }
  }
};

struct SynthDataset {
  LabelMap label_map;
  std::vector<VideoSample> train;
  std::vector<VideoSample> test;
};

namespace detail {

// Transition weights and class means both come from the transition seed so
// the chain geometry is a property of the config, independent of which
// dataset realization is drawn.
inline void synth_chain(const SynthConfig& cfg, std::vector<std::vector<double>>& transitions,
                        Tensor& means) {
  Rng rng(cfg.transition_seed);
  const std::size_t c = cfg.num_classes;
  transitions.assign(c, std::vector<double>(c, 0.0));
  for (std::size_t i = 0; i < c; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j == i) continue;  // no self-transitions: segments change class
      transitions[i][j] = rng.uniform(0.5, 1.5);
      total += transitions[i][j];
    }
    for (std::size_t j = 0; j < c; ++j) transitions[i][j] /= total;
  }
  means = Tensor({c, cfg.feature_dim});
  double* m = means.mutable_data();
  for (std::size_t i = 0; i < c; ++i) {
    double norm_sq = 0.0;
    do {
      norm_sq = 0.0;
      for (std::size_t j = 0; j < cfg.feature_dim; ++j) {
        m[i * cfg.feature_dim + j] = rng.normal();
        norm_sq += m[i * cfg.feature_dim + j] * m[i * cfg.feature_dim + j];
      }
    } while (norm_sq < 1e-12);
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (std::size_t j = 0; j < cfg.feature_dim; ++j) m[i * cfg.feature_dim + j] *= inv;
  }
}

inline std::size_t synth_next_state(const std::vector<double>& row, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    cum += row[j];
    if (u < cum) return j;
  }
  // Guard against cumulative rounding; the last positive-probability state.
  for (std::size_t j = row.size(); j-- > 0;)
    if (row[j] > 0.0) return j;
  return 0;
}

inline VideoSample synth_video(const SynthConfig& cfg,
                               const std::vector<std::vector<double>>& transitions,
                               const Tensor& means, const std::string& id, Rng& rng) {
  const std::size_t d = cfg.feature_dim;
  std::vector<int> labels;
  std::size_t state = rng.uniform_index(cfg.num_classes);
  for (std::size_t s = 0; s < cfg.segments_per_video; ++s) {
    if (s > 0) state = synth_next_state(transitions[state], rng);
    const std::size_t len =
        cfg.min_segment_len + rng.uniform_index(cfg.max_segment_len - cfg.min_segment_len + 1);
    labels.insert(labels.end(), len, static_cast<int>(state));
  }
  VideoSample v;
  v.id = id;
  v.labels = std::move(labels);
  v.features = Tensor({v.labels.size(), d});
  double* dst = v.features.mutable_data();
  const double* m = means.data();
  for (std::size_t t = 0; t < v.labels.size(); ++t) {
    const std::size_t cls = static_cast<std::size_t>(v.labels[t]);
    for (std::size_t j = 0; j < d; ++j) {
      double noise = cfg.noise_sigma == 0.0 ? 0.0 : cfg.noise_sigma * rng.normal();
      dst[t * d + j] = m[cls * d + j] + noise;
    }
  }
  return v;
}

}  // namespace detail

inline std::vector<std::vector<double>> synth_transition_matrix(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<double>> transitions;
  Tensor means;
  detail::synth_chain(cfg, transitions, means);
  return transitions;
}

inline Tensor synth_class_means(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<std::vector<double>> transitions;
  Tensor means;
  detail::synth_chain(cfg, transitions, means);
  return means;
}

inline SynthDataset synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<std::vector<double>> transitions;
  Tensor means;
  detail::synth_chain(cfg, transitions, means);

  std::vector<std::string> names;
  for (std::size_t i = 0; i < cfg.num_classes; ++i)
    names.push_back(detail::msg("action_", i));

  SynthDataset ds;
  ds.label_map = LabelMap(std::move(names));
  Rng rng(seed);
  for (std::size_t i = 0; i < cfg.train_videos; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "train_%04zu", i);
    ds.train.push_back(detail::synth_video(cfg, transitions, means, buf, rng));
  }
  for (std::size_t i = 0; i < cfg.test_videos; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "test_%04zu", i);
    ds.test.push_back(detail::synth_video(cfg, transitions, means, buf, rng));
  }
  return ds;
}

}  // namespace cetnet
