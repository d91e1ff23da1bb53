#pragma once

// Flat key=value configuration files ("#" comments, dotted keys), resolution
// into the typed config structs with every-violation-at-once error
// reporting, deterministic serialization of the resolved state, and FNV-1a
// digests for run manifests.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cetnet/metrics.hpp"
#include "cetnet/synth.hpp"
#include "cetnet/train.hpp"

namespace cetnet {

// ---------------------------------------------------------------------------
// key=value parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

inline std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                            const std::string& source) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> problems;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      problems.push_back(detail::msg(source, ":", line_no, ": expected 'key = value'"));
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) {
      problems.push_back(detail::msg(source, ":", line_no, ": empty key"));
      continue;
    }
    if (!kv.emplace(key, value).second)
      problems.push_back(detail::msg(source, ":", line_no, ": duplicate key '", key, "'"));
  }
  if (!problems.empty()) {
    std::string joined = "invalid config:";
    for (const auto& p : problems) joined += " " + p + ";";
    joined.pop_back();
    throw ConfigError(joined);
  }
  return kv;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(detail::msg("cannot open config file '", path, "'"));
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

// ---------------------------------------------------------------------------
// resolved configuration
// ---------------------------------------------------------------------------

struct ResolvedConfig {
  TrainConfig train;  // nests LossConfig and ModelConfig
  SynthConfig synth;
  std::string data_dir;
  std::string train_split = "train";
  std::string eval_split = "test";
  std::string profile;         // dataset profile; "50salads" implies frame step 2
  std::size_t frame_step = 0;  // 0 = derive from profile
  EvalOptions eval_options;

  std::size_t effective_frame_step() const {
    if (frame_step > 0) return frame_step;
    return profile == "50salads" ? 2 : 1;
  }
};

namespace detail {

class ConfigBinder {
 public:
  explicit ConfigBinder(std::map<std::string, std::string> kv) : kv_(std::move(kv)) {}

  void bind_u64(const char* key, std::size_t& out) {
    if (auto v = take(key)) parse_num(key, *v, out);
  }
  void bind_seed(const char* key, std::uint64_t& out) {
    if (auto v = take(key)) parse_num(key, *v, out);
  }
  void bind_f64(const char* key, double& out) {
    if (auto v = take(key)) {
      try {
        std::size_t used = 0;
        out = std::stod(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
      } catch (const std::exception&) {
        problems_.push_back(msg(key, ": not a number: '", *v, "'"));
      }
    }
  }
  void bind_str(const char* key, std::string& out) {
    if (auto v = take(key)) out = *v;
  }
  void bind_bool(const char* key, bool& out) {
    if (auto v = take(key)) {
      if (*v == "true" || *v == "1")
        out = true;
      else if (*v == "false" || *v == "0")
        out = false;
      else
        problems_.push_back(msg(key, ": expected true/false, got '", *v, "'"));
    }
  }
  void bind_cross_mode(const char* key, CrossMode& out) {
    if (auto v = take(key)) {
      try {
        out = cross_mode_from_string(*v);
      } catch (const Error& e) {
        problems_.push_back(msg(key, ": ", e.what()));
      }
    }
  }
  void bind_label_set(const char* key, std::set<int>& out) {
    if (auto v = take(key)) {
      out.clear();
      std::istringstream parts(*v);
      std::string item;
      while (std::getline(parts, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
          std::size_t used = 0;
          out.insert(std::stoi(item, &used));
          if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
          problems_.push_back(msg(key, ": bad label id '", item, "'"));
        }
      }
    }
  }

  void note_problem(std::string p) { problems_.push_back(std::move(p)); }

  // Unknown keys and accumulated parse problems become one ConfigError.
  void finish() {
    for (const auto& [key, value] : kv_) problems_.push_back(msg("unknown key '", key, "'"));
    if (!problems_.empty()) {
      std::string joined = "invalid config:";
      for (const auto& p : problems_) joined += " " + p + ";";
      joined.pop_back();
      throw ConfigError(joined);
    }
  }

 private:
  std::optional<std::string> take(const char* key) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return std::nullopt;
    std::string v = it->second;
    kv_.erase(it);
    return v;
  }

  template <typename T>
  void parse_num(const char* key, const std::string& v, T& out) {
    try {
      std::size_t used = 0;
      const unsigned long long n = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      out = static_cast<T>(n);
    } catch (const std::exception&) {
      problems_.push_back(msg(key, ": not a non-negative integer: '", v, "'"));
    }
  }

  std::map<std::string, std::string> kv_;
  std::vector<std::string> problems_;
};

}  // namespace detail

// Applies file keys over the defaults. Unknown keys, malformed values, and
// (when `validate` is set) every violated range constraint are reported
// together in a single error.
inline ResolvedConfig resolve_config(const std::map<std::string, std::string>& kv,
                                     bool validate = true) {
  ResolvedConfig cfg;
  detail::ConfigBinder bind(kv);

  bind.bind_u64("model.input_dim", cfg.train.model.input_dim);
  bind.bind_u64("model.model_dim", cfg.train.model.model_dim);
  bind.bind_u64("model.num_layers", cfg.train.model.num_layers);
  bind.bind_u64("model.num_decoders", cfg.train.model.num_decoders);
  bind.bind_u64("model.num_classes", cfg.train.model.num_classes);
  bind.bind_u64("model.heads", cfg.train.model.heads);
  bind.bind_u64("model.r", cfg.train.model.r);
  bind.bind_u64("model.window", cfg.train.model.window);
  bind.bind_cross_mode("model.cross_mode", cfg.train.model.cross_mode);

  bind.bind_f64("loss.lambda", cfg.train.loss.lambda);
  bind.bind_f64("loss.beta", cfg.train.loss.beta);
  bind.bind_f64("loss.tau", cfg.train.loss.tau);
  bind.bind_f64("loss.gamma", cfg.train.loss.gamma);
  bind.bind_f64("loss.margin", cfg.train.loss.margin);

  bind.bind_u64("train.epochs", cfg.train.epochs);
  bind.bind_f64("train.learning_rate", cfg.train.learning_rate);
  bind.bind_f64("train.beta1", cfg.train.beta1);
  bind.bind_f64("train.beta2", cfg.train.beta2);
  bind.bind_f64("train.adam_epsilon", cfg.train.adam_epsilon);
  bind.bind_f64("train.grad_clip", cfg.train.grad_clip);
  bind.bind_f64("train.lr_decay", cfg.train.lr_decay);
  bind.bind_seed("train.seed", cfg.train.seed);

  bind.bind_u64("synth.num_classes", cfg.synth.num_classes);
  bind.bind_u64("synth.feature_dim", cfg.synth.feature_dim);
  bind.bind_u64("synth.min_segment_len", cfg.synth.min_segment_len);
  bind.bind_u64("synth.max_segment_len", cfg.synth.max_segment_len);
  bind.bind_u64("synth.segments_per_video", cfg.synth.segments_per_video);
  bind.bind_seed("synth.transition_seed", cfg.synth.transition_seed);
  bind.bind_f64("synth.noise_sigma", cfg.synth.noise_sigma);
  bind.bind_u64("synth.train_videos", cfg.synth.train_videos);
  bind.bind_u64("synth.test_videos", cfg.synth.test_videos);

  bind.bind_str("data.dir", cfg.data_dir);
  bind.bind_str("data.train_split", cfg.train_split);
  bind.bind_str("data.eval_split", cfg.eval_split);
  bind.bind_str("data.profile", cfg.profile);
  bind.bind_u64("data.frame_step", cfg.frame_step);

  bind.bind_bool("eval.per_video_f1", cfg.eval_options.per_video_f1);
  bind.bind_label_set("eval.ignore_labels", cfg.eval_options.ignore_labels);

  if (validate) {
    // Model input width and class count may be 0 here, meaning "infer from
    // the dataset"; commands validate the full TrainConfig after inference.
    try {
      cfg.train.loss.validate();
    } catch (const ConfigError& e) {
      bind.note_problem(e.what());
    }
    try {
      cfg.synth.validate();
    } catch (const ConfigError& e) {
      bind.note_problem(e.what());
    }
  }
  bind.finish();
  return cfg;
}

// Every key with its resolved value, defaults materialized, in a fixed
// order. Doubles use max precision so reruns compare bitwise.
inline std::vector<std::pair<std::string, std::string>> serialize_config(
    const ResolvedConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  auto num = [](auto v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  out.emplace_back("model.input_dim", num(cfg.train.model.input_dim));
  out.emplace_back("model.model_dim", num(cfg.train.model.model_dim));
  out.emplace_back("model.num_layers", num(cfg.train.model.num_layers));
  out.emplace_back("model.num_decoders", num(cfg.train.model.num_decoders));
  out.emplace_back("model.num_classes", num(cfg.train.model.num_classes));
  out.emplace_back("model.heads", num(cfg.train.model.heads));
  out.emplace_back("model.r", num(cfg.train.model.r));
  out.emplace_back("model.window", num(cfg.train.model.window));
  out.emplace_back("model.cross_mode", to_string(cfg.train.model.cross_mode));
  out.emplace_back("loss.lambda", num(cfg.train.loss.lambda));
  out.emplace_back("loss.beta", num(cfg.train.loss.beta));
  out.emplace_back("loss.tau", num(cfg.train.loss.tau));
  out.emplace_back("loss.gamma", num(cfg.train.loss.gamma));
  out.emplace_back("loss.margin", num(cfg.train.loss.margin));
  out.emplace_back("train.epochs", num(cfg.train.epochs));
  out.emplace_back("train.learning_rate", num(cfg.train.learning_rate));
  out.emplace_back("train.beta1", num(cfg.train.beta1));
  out.emplace_back("train.beta2", num(cfg.train.beta2));
  out.emplace_back("train.adam_epsilon", num(cfg.train.adam_epsilon));
  out.emplace_back("train.grad_clip", num(cfg.train.grad_clip));
  out.emplace_back("train.lr_decay", num(cfg.train.lr_decay));
  out.emplace_back("train.seed", num(cfg.train.seed));
  out.emplace_back("synth.num_classes", num(cfg.synth.num_classes));
  out.emplace_back("synth.feature_dim", num(cfg.synth.feature_dim));
  out.emplace_back("synth.min_segment_len", num(cfg.synth.min_segment_len));
  out.emplace_back("synth.max_segment_len", num(cfg.synth.max_segment_len));
  out.emplace_back("synth.segments_per_video", num(cfg.synth.segments_per_video));
  out.emplace_back("synth.transition_seed", num(cfg.synth.transition_seed));
  out.emplace_back("synth.noise_sigma", num(cfg.synth.noise_sigma));
  out.emplace_back("synth.train_videos", num(cfg.synth.train_videos));
  out.emplace_back("synth.test_videos", num(cfg.synth.test_videos));
  out.emplace_back("data.dir", cfg.data_dir);
  out.emplace_back("data.train_split", cfg.train_split);
  out.emplace_back("data.eval_split", cfg.eval_split);
  out.emplace_back("data.profile", cfg.profile);
  out.emplace_back("data.frame_step", num(cfg.frame_step));
  out.emplace_back("eval.per_video_f1", cfg.eval_options.per_video_f1 ? "true" : "false");
  {
    std::string labels;
    for (int l : cfg.eval_options.ignore_labels) {
      if (!labels.empty()) labels += ",";
      labels += std::to_string(l);
    }
    out.emplace_back("eval.ignore_labels", labels);
  }
  return out;
}

// ---------------------------------------------------------------------------
// digests
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a_64(const void* data, std::size_t n,
                              std::uint64_t seed = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string digest_hex(std::uint64_t h) {
  static const char* hex = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = hex[h & 0xf];
    h >>= 4;
  }
  return out;
}

inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(detail::msg("cannot digest '", path, "': cannot open"));
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[65536];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a_64(buf, static_cast<std::size_t>(in.gcount()), h);
  return digest_hex(h);
}

}  // namespace cetnet
