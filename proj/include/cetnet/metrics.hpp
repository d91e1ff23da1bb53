#pragma once

// Evaluation suite for temporal action segmentation: frame accuracy,
// segmental edit score, and segmental F1 at overlap thresholds {10,25,50}%.

#include <algorithm>
#include <cstdio>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "cetnet/tensor.hpp"

namespace cetnet {

// ---------------------------------------------------------------------------
// segments
// ---------------------------------------------------------------------------

struct Segment {
  int label = 0;
  std::size_t start = 0;  // inclusive
  std::size_t end = 0;    // exclusive

  std::size_t length() const { return end - start; }
  friend bool operator==(const Segment& a, const Segment& b) {
    return a.label == b.label && a.start == b.start && a.end == b.end;
  }
};

using SegmentList = std::vector<Segment>;

// Maximal-run encoding; concatenating the spans reproduces the input.
inline SegmentList segments_from_labels(const std::vector<int>& labels) {
  if (labels.empty()) throw DataError("segments_from_labels: empty label sequence");
  SegmentList segs;
  std::size_t start = 0;
  for (std::size_t t = 1; t <= labels.size(); ++t) {
    if (t == labels.size() || labels[t] != labels[start]) {
      segs.push_back({labels[start], start, t});
      start = t;
    }
  }
  return segs;
}

inline std::vector<int> labels_from_segments(const SegmentList& segs) {
  std::vector<int> labels;
  for (const auto& s : segs)
    for (std::size_t t = s.start; t < s.end; ++t) labels.push_back(s.label);
  return labels;
}

inline double segment_iou(const Segment& a, const Segment& b) {
  const long inter = std::min<long>(static_cast<long>(a.end), static_cast<long>(b.end)) -
                     std::max<long>(static_cast<long>(a.start), static_cast<long>(b.start));
  if (inter <= 0) return 0.0;
  const double uni =
      static_cast<double>(a.length() + b.length()) - static_cast<double>(inter);
  return static_cast<double>(inter) / uni;
}

// ---------------------------------------------------------------------------
// options and report
// ---------------------------------------------------------------------------

struct EvalOptions {
  // Labels excluded from evaluation: their frames are dropped from accuracy
  // and their segments from edit and F1 on both sides. Empty by default.
  std::set<int> ignore_labels;
  // F1 aggregation across a corpus: pooled TP/FP/FN counts (default) or the
  // mean of per-video F1 scores.
  bool per_video_f1 = false;
};

struct MetricReport {
  double acc = 0.0;
  double edit = 0.0;
  double f1_10 = 0.0;
  double f1_25 = 0.0;
  double f1_50 = 0.0;
};

inline const std::vector<double>& default_f1_thresholds() {
  static const std::vector<double> t{0.10, 0.25, 0.50};
  return t;
}

// ---------------------------------------------------------------------------
// per-video metrics
// ---------------------------------------------------------------------------

inline double frame_accuracy(const std::vector<int>& pred, const std::vector<int>& gt,
                             const EvalOptions& opt = {}) {
  if (pred.size() != gt.size())
    throw ShapeError(detail::msg("frame_accuracy: ", pred.size(), " predicted frames vs ",
                                 gt.size(), " ground-truth frames"));
  if (gt.empty()) throw DataError("frame_accuracy: empty sequences");
  std::size_t total = 0, correct = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) {
    if (opt.ignore_labels.count(gt[t])) continue;
    ++total;
    if (pred[t] == gt[t]) ++correct;
  }
  if (total == 0) return 100.0;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

namespace detail {

inline std::vector<int> segment_labels(const std::vector<int>& labels,
                                       const std::set<int>& ignore) {
  std::vector<int> out;
  for (const auto& s : segments_from_labels(labels))
    if (!ignore.count(s.label)) out.push_back(s.label);
  return out;
}

// Two-row Levenshtein distance over segment label strings.
inline std::size_t levenshtein(const std::vector<int>& a, const std::vector<int>& b) {
  const std::size_t n = b.size();
  std::vector<std::size_t> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= n; ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

struct F1Counts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

// Greedy matching: predictions in temporal order grab the highest-IoU
// not-yet-matched ground-truth segment of the same label (first one on
// ties); the match counts when IoU >= tau (boundary inclusive).
inline F1Counts f1_counts(const SegmentList& pred, const SegmentList& gt, double tau,
                          const std::set<int>& ignore) {
  SegmentList p, g;
  for (const auto& s : pred)
    if (!ignore.count(s.label)) p.push_back(s);
  for (const auto& s : gt)
    if (!ignore.count(s.label)) g.push_back(s);

  F1Counts counts;
  std::vector<bool> used(g.size(), false);
  for (const auto& ps : p) {
    double best = -1.0;
    std::size_t best_g = g.size();
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (used[j] || g[j].label != ps.label) continue;
      const double iou = segment_iou(ps, g[j]);
      if (iou > best) {
        best = iou;
        best_g = j;
      }
    }
    if (best_g < g.size() && best >= tau) {
      used[best_g] = true;
      ++counts.tp;
    } else {
      ++counts.fp;
    }
  }
  counts.fn = g.size() - counts.tp;
  return counts;
}

inline double f1_from_counts(const F1Counts& c) {
  const double tp = static_cast<double>(c.tp);
  const double denom_p = tp + static_cast<double>(c.fp);
  const double denom_r = tp + static_cast<double>(c.fn);
  const double precision = denom_p > 0 ? tp / denom_p : 0.0;
  const double recall = denom_r > 0 ? tp / denom_r : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 100.0 * 2.0 * precision * recall / (precision + recall);
}

}  // namespace detail

inline double edit_score(const std::vector<int>& pred, const std::vector<int>& gt,
                         const EvalOptions& opt = {}) {
  const std::vector<int> p = detail::segment_labels(pred, opt.ignore_labels);
  const std::vector<int> g = detail::segment_labels(gt, opt.ignore_labels);
  const std::size_t longest = std::max(p.size(), g.size());
  if (longest == 0) return 100.0;  // nothing to segment on either side
  const double score =
      100.0 * (1.0 - static_cast<double>(detail::levenshtein(p, g)) /
                         static_cast<double>(longest));
  return std::max(0.0, score);
}

// F1 per threshold, aligned with `thresholds`.
inline std::vector<double> f1_at_k(const std::vector<int>& pred, const std::vector<int>& gt,
                                   const std::vector<double>& thresholds = default_f1_thresholds(),
                                   const EvalOptions& opt = {}) {
  if (pred.size() != gt.size())
    throw ShapeError(detail::msg("f1_at_k: ", pred.size(), " predicted frames vs ", gt.size(),
                                 " ground-truth frames"));
  const SegmentList ps = segments_from_labels(pred);
  const SegmentList gs = segments_from_labels(gt);
  std::vector<double> out;
  for (double tau : thresholds)
    out.push_back(detail::f1_from_counts(detail::f1_counts(ps, gs, tau, opt.ignore_labels)));
  return out;
}

// ---------------------------------------------------------------------------
// corpus aggregation
// ---------------------------------------------------------------------------

// Frame accuracy pooled over all frames, edit averaged per video, and F1
// from pooled TP/FP/FN counts (or per-video averages when the option says
// so).
inline MetricReport evaluate_corpus(
    const std::vector<std::pair<std::vector<int>, std::vector<int>>>& videos,
    const EvalOptions& opt = {}) {
  if (videos.empty()) throw DataError("evaluate_corpus: empty corpus");

  std::size_t frames_total = 0, frames_correct = 0;
  double edit_sum = 0.0;
  const auto& thresholds = default_f1_thresholds();
  std::vector<detail::F1Counts> pooled(thresholds.size());
  std::vector<double> f1_sums(thresholds.size(), 0.0);

  for (const auto& [pred, gt] : videos) {
    if (pred.size() != gt.size())
      throw ShapeError(detail::msg("evaluate_corpus: ", pred.size(), " predicted frames vs ",
                                   gt.size(), " ground-truth frames"));
    if (gt.empty()) throw DataError("evaluate_corpus: empty video");
    for (std::size_t t = 0; t < gt.size(); ++t) {
      if (opt.ignore_labels.count(gt[t])) continue;
      ++frames_total;
      if (pred[t] == gt[t]) ++frames_correct;
    }
    edit_sum += edit_score(pred, gt, opt);
    const SegmentList ps = segments_from_labels(pred);
    const SegmentList gs = segments_from_labels(gt);
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      const auto c = detail::f1_counts(ps, gs, thresholds[k], opt.ignore_labels);
      pooled[k].tp += c.tp;
      pooled[k].fp += c.fp;
      pooled[k].fn += c.fn;
      f1_sums[k] += detail::f1_from_counts(c);
    }
  }

  MetricReport report;
  report.acc = frames_total == 0
                   ? 100.0
                   : 100.0 * static_cast<double>(frames_correct) /
                         static_cast<double>(frames_total);
  report.edit = edit_sum / static_cast<double>(videos.size());
  std::vector<double> f1(thresholds.size());
  for (std::size_t k = 0; k < thresholds.size(); ++k)
    f1[k] = opt.per_video_f1 ? f1_sums[k] / static_cast<double>(videos.size())
                             : detail::f1_from_counts(pooled[k]);
  report.f1_10 = f1[0];
  report.f1_25 = f1[1];
  report.f1_50 = f1[2];
  return report;
}

// ---------------------------------------------------------------------------
// report formatting
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace detail

inline std::string metric_report_text(const MetricReport& r) {
  std::string out;
  out += "acc:   " + detail::fixed4(r.acc) + "\n";
  out += "edit:  " + detail::fixed4(r.edit) + "\n";
  out += "f1_10: " + detail::fixed4(r.f1_10) + "\n";
  out += "f1_25: " + detail::fixed4(r.f1_25) + "\n";
  out += "f1_50: " + detail::fixed4(r.f1_50) + "\n";
  return out;
}

inline std::string metric_report_json(const MetricReport& r) {
  std::string out = "{";
  out += "\"acc\": " + detail::fixed4(r.acc) + ", ";
  out += "\"edit\": " + detail::fixed4(r.edit) + ", ";
  out += "\"f1_10\": " + detail::fixed4(r.f1_10) + ", ";
  out += "\"f1_25\": " + detail::fixed4(r.f1_25) + ", ";
  out += "\"f1_50\": " + detail::fixed4(r.f1_50) + "}";
  return out;
}

}  // namespace cetnet
