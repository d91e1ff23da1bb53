#pragma once

// Dataset plumbing: the CETF binary feature format, label/mapping/split text
// files, the on-disk dataset layout, frame-step subsampling, and a CSV
// converter.
//
// Dataset directory layout:
//   root/
//     features/<id>.cetf        binary frame features
//     groundTruth/<id>.txt      one class name per line
//     mapping.txt               "<id> <name>" per line, ids dense from 0
//     splits/<name>.split       one video id per line

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cetnet/binary.hpp"
#include "cetnet/tensor.hpp"

namespace cetnet {

// ---------------------------------------------------------------------------
// domain types
// ---------------------------------------------------------------------------

struct VideoSample {
  std::string id;
  Tensor features;  // T x D
  std::vector<int> labels;
};

class LabelMap {
 public:
  LabelMap() = default;

  explicit LabelMap(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i].empty()) throw DataError("label map: empty class name");
      if (!ids_.emplace(names_[i], static_cast<int>(i)).second)
        throw DataError(detail::msg("label map: duplicate class name '", names_[i], "'"));
    }
  }

  static LabelMap from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError(detail::msg("cannot open mapping file '", path, "'"));
    std::map<std::size_t, std::string> by_id;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::istringstream parts(line);
      long long id = -1;
      std::string name;
      if (!(parts >> id >> name) || id < 0)
        throw FormatError(detail::msg(path, ":", line_no, ": expected '<id> <name>', got '",
                                      line, "'"));
      if (!by_id.emplace(static_cast<std::size_t>(id), name).second)
        throw FormatError(detail::msg(path, ":", line_no, ": duplicate class id ", id));
    }
    if (by_id.empty()) throw FormatError(detail::msg(path, ": empty mapping file"));
    std::vector<std::string> names;
    for (const auto& [id, name] : by_id) {
      if (id != names.size())
        throw FormatError(detail::msg(path, ": class ids are not dense, missing id ",
                                      names.size()));
      names.push_back(name);
    }
    return LabelMap(std::move(names));
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError(detail::msg("cannot write mapping file '", path, "'"));
    for (std::size_t i = 0; i < names_.size(); ++i) out << i << " " << names_[i] << "\n";
  }

  std::size_t size() const { return names_.size(); }

  int id_of(const std::string& name) const {
    auto it = ids_.find(name);
    if (it == ids_.end())
      throw DataError(detail::msg("unknown class name '", name, "'"));
    return it->second;
  }

  const std::string& name_of(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= names_.size())
      throw DataError(detail::msg("class id ", id, " outside [0, ", names_.size(), ")"));
    return names_[static_cast<std::size_t>(id)];
  }

  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, int> ids_;
};

struct Dataset {
  LabelMap label_map;
  std::vector<VideoSample> videos;
};

// ---------------------------------------------------------------------------
// CETF feature files
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[5] = "CETF";
inline constexpr std::uint32_t kFeatureVersion = 1;

inline void save_feature_file(const std::string& path, const Tensor& features) {
  if (features.rank() != 2 || features.rows() == 0 || features.cols() == 0)
    throw ShapeError(detail::msg("save_feature_file: features must be a nonempty [T x D], got ",
                                 detail::shape_str(features.shape())));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(detail::msg("cannot open '", path, "' for writing"));
  detail::ByteWriter w(out);
  w.bytes(kFeatureMagic, 4);
  w.u32(kFeatureVersion);
  w.u64(features.rows());
  w.u64(features.cols());
  const double* data = features.data();
  for (std::size_t i = 0; i < features.size(); ++i)
    w.f32(static_cast<float>(data[i]));
  out.flush();
  if (!out) throw DataError(detail::msg("failed while writing '", path, "'"));
}

inline Tensor load_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(detail::msg("cannot open '", path, "' for reading"));
  detail::ByteReader r(in, path);
  r.expect_magic(kFeatureMagic);
  const std::uint32_t version = r.u32("format version");
  if (version != kFeatureVersion)
    r.fail(detail::msg("unsupported feature-file version ", version, " (expected ",
                       kFeatureVersion, ")"));
  const std::uint64_t t_len = r.u64("frame count T");
  const std::uint64_t d = r.u64("feature dimension D");
  if (t_len == 0) r.fail("frame count T must be positive");
  if (d == 0) r.fail("feature dimension D must be positive");
  if (t_len > (std::uint64_t{1} << 32) || d > (std::uint64_t{1} << 20) ||
      t_len * d > (std::uint64_t{1} << 34))
    r.fail(detail::msg("implausible dimensions T=", t_len, " D=", d));

  Tensor out({static_cast<std::size_t>(t_len), static_cast<std::size_t>(d)});
  double* dst = out.mutable_data();
  for (std::size_t i = 0; i < out.size(); ++i)
    dst[i] = static_cast<double>(r.f32("feature payload"));
  if (!r.at_eof())
    r.fail(detail::msg("trailing bytes after ", t_len, "x", d, " payload"));
  return out;
}

// ---------------------------------------------------------------------------
// label files
// ---------------------------------------------------------------------------

inline std::vector<int> load_labels(const std::string& path, const LabelMap& map) {
  std::ifstream in(path);
  if (!in) throw DataError(detail::msg("cannot open label file '", path, "'"));
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  bool pending_blank = false;
  std::size_t blank_line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      // Tolerated only as trailing newline noise; an interior blank line is
      // a malformed file.
      if (!pending_blank) {
        pending_blank = true;
        blank_line_no = line_no;
      }
      continue;
    }
    if (pending_blank)
      throw FormatError(detail::msg(path, ":", blank_line_no, ": blank line inside label file"));
    try {
      labels.push_back(map.id_of(line));
    } catch (const DataError&) {
      throw DataError(detail::msg(path, ":", line_no, ": unknown class name '", line, "'"));
    }
  }
  if (labels.empty()) throw DataError(detail::msg(path, ": no labels"));
  return labels;
}

inline void save_labels(const std::string& path, const std::vector<int>& labels,
                        const LabelMap& map) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError(detail::msg("cannot write label file '", path, "'"));
  for (int l : labels) out << map.name_of(l) << "\n";
}

// ---------------------------------------------------------------------------
// frame-step subsampling
// ---------------------------------------------------------------------------

inline VideoSample subsample(const VideoSample& sample, std::size_t step) {
  if (step < 1) throw ConfigError("subsample: step must be >= 1");
  if (step == 1) return sample;
  const std::size_t t_len = sample.features.rows();
  const std::size_t d = sample.features.cols();
  const std::size_t kept = (t_len + step - 1) / step;
  VideoSample out;
  out.id = sample.id;
  out.features = Tensor({kept, d});
  out.labels.reserve(kept);
  double* dst = out.features.mutable_data();
  const double* src = sample.features.data();
  for (std::size_t i = 0; i < kept; ++i) {
    const std::size_t t = i * step;
    for (std::size_t j = 0; j < d; ++j) dst[i * d + j] = src[t * d + j];
    out.labels.push_back(sample.labels[t]);
  }
  return out;
}

// Repeats each prediction `step` times and truncates to the native length.
inline std::vector<int> upsample_predictions(const std::vector<int>& pred, std::size_t step,
                                             std::size_t native_t) {
  if (step < 1) throw ConfigError("upsample_predictions: step must be >= 1");
  if (pred.empty()) throw DataError("upsample_predictions: empty predictions");
  if ((native_t + step - 1) / step != pred.size())
    throw ShapeError(detail::msg("upsample_predictions: ", pred.size(),
                                 " predictions cannot cover ", native_t, " frames at step ",
                                 step));
  std::vector<int> out;
  out.reserve(native_t);
  for (std::size_t t = 0; t < native_t; ++t) out.push_back(pred[t / step]);
  return out;
}

// ---------------------------------------------------------------------------
// dataset directory
// ---------------------------------------------------------------------------

inline std::vector<std::string> load_split(const std::string& root, const std::string& split) {
  const std::string path = root + "/splits/" + split + ".split";
  std::ifstream in(path);
  if (!in) throw DataError(detail::msg("cannot open split file '", path, "'"));
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  if (ids.empty()) throw DataError(detail::msg(path, ": empty split"));
  return ids;
}

inline VideoSample load_video(const std::string& root, const std::string& id,
                              const LabelMap& map) {
  VideoSample sample;
  sample.id = id;
  sample.features = load_feature_file(root + "/features/" + id + ".cetf");
  sample.labels = load_labels(root + "/groundTruth/" + id + ".txt", map);
  if (sample.labels.size() != sample.features.rows())
    throw DataError(detail::msg("video '", id, "': ", sample.features.rows(),
                                " feature rows but ", sample.labels.size(), " labels"));
  return sample;
}

inline Dataset load_dataset(const std::string& root, const std::string& split,
                            std::size_t frame_step = 1) {
  Dataset ds;
  ds.label_map = LabelMap::from_file(root + "/mapping.txt");
  for (const auto& id : load_split(root, split))
    ds.videos.push_back(subsample(load_video(root, id, ds.label_map), frame_step));
  return ds;
}

// Writes a full dataset directory with train/test splits.
inline void save_dataset(const std::string& root, const LabelMap& map,
                         const std::vector<VideoSample>& train,
                         const std::vector<VideoSample>& test) {
  namespace fs = std::filesystem;
  fs::create_directories(root + "/features");
  fs::create_directories(root + "/groundTruth");
  fs::create_directories(root + "/splits");
  map.save(root + "/mapping.txt");
  auto write_split = [&](const std::string& name, const std::vector<VideoSample>& videos) {
    std::ofstream out(root + "/splits/" + name + ".split", std::ios::trunc);
    if (!out) throw DataError(detail::msg("cannot write split '", name, "'"));
    for (const auto& v : videos) {
      save_feature_file(root + "/features/" + v.id + ".cetf", v.features);
      save_labels(root + "/groundTruth/" + v.id + ".txt", v.labels, map);
      out << v.id << "\n";
    }
  };
  write_split("train", train);
  write_split("test", test);
}

// ---------------------------------------------------------------------------
// CSV interop
// ---------------------------------------------------------------------------

// CSV layout: header line "T,D", then T rows of D comma-separated values.
inline void csv_to_cetf(const std::string& csv_path, const std::string& out_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError(detail::msg("cannot open '", csv_path, "'"));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(detail::msg(csv_path, ":1: missing header"));
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::size_t t_len = 0, d = 0;
  {
    std::istringstream header(line);
    char comma = 0;
    if (!(header >> t_len >> comma >> d) || comma != ',' || t_len == 0 || d == 0)
      throw FormatError(detail::msg(csv_path, ":1: header must be 'T,D' with positive values, got '",
                                    line, "'"));
  }
  Tensor features({t_len, d});
  double* dst = features.mutable_data();
  for (std::size_t t = 0; t < t_len; ++t) {
    if (!std::getline(in, line))
      throw FormatError(detail::msg(csv_path, ": expected ", t_len, " data rows, found ", t));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream row(line);
    std::string cell;
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::getline(row, cell, ','))
        throw FormatError(detail::msg(csv_path, ":", t + 2, ": expected ", d,
                                      " values, found ", j));
      try {
        std::size_t used = 0;
        dst[t * d + j] = std::stod(cell, &used);
        while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw FormatError(detail::msg(csv_path, ":", t + 2, ": bad number '", cell, "'"));
      }
    }
    if (std::getline(row, cell, ','))
      throw FormatError(detail::msg(csv_path, ":", t + 2, ": more than ", d, " values"));
  }
  if (std::getline(in, line) && !line.empty() && line != "\r")
    throw FormatError(detail::msg(csv_path, ": trailing content after ", t_len, " rows"));
  save_feature_file(out_path, features);
}

// ---------------------------------------------------------------------------
// cross-validation splits
// ---------------------------------------------------------------------------

// Fold i holds out ids[j] with j % k == i; every id is a test item in
// exactly one fold.
inline std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>
kfold_splits(const std::vector<std::string>& ids, std::size_t k) {
  if (k < 2 || k > ids.size())
    throw ConfigError(detail::msg("kfold_splits: k=", k, " invalid for ", ids.size(),
                                  " videos"));
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> folds(k);
  for (std::size_t j = 0; j < ids.size(); ++j)
    for (std::size_t i = 0; i < k; ++i)
      (j % k == i ? folds[i].second : folds[i].first).push_back(ids[j]);
  return folds;
}

}  // namespace cetnet
