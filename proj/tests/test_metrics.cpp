#include <catch2/catch_amalgamated.hpp>

#include <set>
#include <vector>

#include "cetnet/metrics.hpp"
#include "cetnet/rng.hpp"
#include "support/oracles.hpp"

using namespace cetnet;

namespace {

std::vector<int> random_labels(std::size_t t_len, std::size_t c, Rng& rng) {
  std::vector<int> labels(t_len);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(c));
  return labels;
}

// Segment-ish random sequences: a few runs rather than frame-level noise.
std::vector<int> random_runs(std::size_t t_len, std::size_t c, Rng& rng) {
  std::vector<int> labels;
  while (labels.size() < t_len) {
    const int label = static_cast<int>(rng.uniform_index(c));
    const std::size_t run = 1 + rng.uniform_index(6);
    for (std::size_t i = 0; i < run && labels.size() < t_len; ++i) labels.push_back(label);
  }
  return labels;
}

std::vector<oracles::OracleSegment> to_oracle(const SegmentList& segs) {
  std::vector<oracles::OracleSegment> out;
  for (const auto& s : segs) out.push_back({s.label, s.start, s.end});
  return out;
}

}  // namespace

TEST_CASE("segments_from_labels basics") {
  const auto segs = segments_from_labels({7, 7, 3});
  REQUIRE(segs.size() == 2);
  CHECK(segs[0] == Segment{7, 0, 2});
  CHECK(segs[1] == Segment{3, 2, 3});

  CHECK(segments_from_labels({4, 4, 4, 4, 4}).size() == 1);
  CHECK_THROWS_AS(segments_from_labels({}), DataError);
}

TEST_CASE("segments round trip on random sequences") {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const auto labels = random_runs(1 + rng.uniform_index(40), 4, rng);
    const auto segs = segments_from_labels(labels);
    CHECK(labels_from_segments(segs) == labels);
    // Maximal runs: adjacent segments differ in label and tile [0, T).
    for (std::size_t i = 0; i < segs.size(); ++i) {
      CHECK(segs[i].start < segs[i].end);
      if (i > 0) {
        CHECK(segs[i].start == segs[i - 1].end);
        CHECK(segs[i].label != segs[i - 1].label);
      }
    }
    CHECK(segs.front().start == 0);
    CHECK(segs.back().end == labels.size());
  }
}

TEST_CASE("frame accuracy basics") {
  CHECK(frame_accuracy({1, 2, 3}, {1, 2, 3}) == 100.0);
  CHECK(frame_accuracy({1, 2, 3, 4}, {1, 2, 0, 0}) == 50.0);
  CHECK(frame_accuracy({1, 1}, {2, 2}) == 0.0);
  CHECK_THROWS_AS(frame_accuracy({1}, {1, 2}), ShapeError);
}

TEST_CASE("frame accuracy matches the counting oracle on random pairs") {
  Rng rng(2);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t t_len = 1 + rng.uniform_index(50);
    const auto pred = random_labels(t_len, 5, rng);
    const auto gt = random_labels(t_len, 5, rng);
    std::size_t correct = 0;
    for (std::size_t t = 0; t < t_len; ++t) correct += pred[t] == gt[t];
    CHECK(frame_accuracy(pred, gt) ==
          100.0 * static_cast<double>(correct) / static_cast<double>(t_len));
  }
}

TEST_CASE("edit score basics") {
  CHECK(edit_score({1, 1, 2, 2}, {1, 1, 1, 2}) == 100.0);
  // pred segments [A, B], gt [A]: distance 1, max length 2.
  CHECK(edit_score({0, 0, 1}, {0, 0, 0}) == 50.0);
}

TEST_CASE("edit score equals the full-matrix DP oracle on random pairs") {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t t_len = 1 + rng.uniform_index(50);
    const auto pred = random_runs(t_len, 5, rng);
    const auto gt = random_runs(t_len, 5, rng);
    std::vector<int> ps, gs;
    for (const auto& s : oracles::run_length(pred)) ps.push_back(s.label);
    for (const auto& s : oracles::run_length(gt)) gs.push_back(s.label);
    const double expected =
        100.0 * (1.0 - static_cast<double>(oracles::dp_levenshtein(ps, gs)) /
                           static_cast<double>(std::max(ps.size(), gs.size())));
    CHECK(edit_score(pred, gt) == expected);
  }
}

TEST_CASE("f1 hand case with an inclusive boundary") {
  // gt: A over [0,10), B over [10,20); pred: A over [0,5), B over [5,20).
  std::vector<int> gt(20, 0), pred(20, 0);
  for (std::size_t t = 10; t < 20; ++t) gt[t] = 1;
  for (std::size_t t = 5; t < 20; ++t) pred[t] = 1;
  // IoU(A) = 5/10 = 0.5 exactly (boundary counts), IoU(B) = 10/15.
  const auto f1 = f1_at_k(pred, gt);
  CHECK(f1[0] == 100.0);
  CHECK(f1[1] == 100.0);
  CHECK(f1[2] == 100.0);
}

TEST_CASE("perfect predictions score 100 everywhere") {
  Rng rng(4);
  const auto labels = random_runs(40, 4, rng);
  CHECK(frame_accuracy(labels, labels) == 100.0);
  CHECK(edit_score(labels, labels) == 100.0);
  for (double v : f1_at_k(labels, labels)) CHECK(v == 100.0);
}

TEST_CASE("greedy f1 matching agrees with the exhaustive oracle") {
  Rng rng(5);
  int compared = 0;
  for (int rep = 0; rep < 300; ++rep) {
    const std::size_t t_len = 2 + rng.uniform_index(30);
    const auto pred = random_runs(t_len, 4, rng);
    const auto gt = random_runs(t_len, 4, rng);
    const auto ps = segments_from_labels(pred);
    const auto gs = segments_from_labels(gt);
    for (double tau : {0.10, 0.25, 0.50}) {
      const auto counts = detail::f1_counts(ps, gs, tau, {});
      const std::size_t oracle_tp = oracles::best_matching_tp(to_oracle(ps), to_oracle(gs), tau);
      CHECK(counts.tp <= oracle_tp);
      if (!oracles::has_duplicate_labels(to_oracle(ps), to_oracle(gs))) {
        CHECK(counts.tp == oracle_tp);
        ++compared;
      }
    }
  }
  // Make sure the non-ambiguous branch was actually exercised.
  CHECK(compared > 50);
}

TEST_CASE("f1 is monotonically non-increasing in the threshold") {
  Rng rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t t_len = 5 + rng.uniform_index(40);
    const auto pred = random_runs(t_len, 4, rng);
    const auto gt = random_runs(t_len, 4, rng);
    const auto f1 = f1_at_k(pred, gt, {0.05, 0.10, 0.25, 0.50, 0.75, 0.99});
    for (std::size_t k = 1; k < f1.size(); ++k) CHECK(f1[k] <= f1[k - 1]);
  }
}

TEST_CASE("edit and f1 are invariant to uniform upsampling") {
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto pred = random_runs(15 + rng.uniform_index(15), 4, rng);
    const auto gt = random_runs(pred.size(), 4, rng);
    auto upsample = [](const std::vector<int>& v, std::size_t k) {
      std::vector<int> out;
      for (int x : v)
        for (std::size_t i = 0; i < k; ++i) out.push_back(x);
      return out;
    };
    for (std::size_t k : {2u, 3u, 5u}) {
      const auto up_pred = upsample(pred, k);
      const auto up_gt = upsample(gt, k);
      CHECK(edit_score(up_pred, up_gt) == edit_score(pred, gt));
      CHECK(f1_at_k(up_pred, up_gt) == f1_at_k(pred, gt));
      CHECK(frame_accuracy(up_pred, up_gt) ==
            Catch::Approx(frame_accuracy(pred, gt)).margin(1e-12));
    }
  }
}

TEST_CASE("corpus evaluation pools correctly") {
  Rng rng(8);
  std::vector<std::pair<std::vector<int>, std::vector<int>>> corpus;
  for (int v = 0; v < 5; ++v) {
    const std::size_t t_len = 10 + rng.uniform_index(30);
    corpus.emplace_back(random_runs(t_len, 4, rng), random_runs(t_len, 4, rng));
  }

  const MetricReport report = evaluate_corpus(corpus);

  // Accuracy pooled over frames.
  std::size_t frames = 0, correct = 0;
  for (const auto& [pred, gt] : corpus)
    for (std::size_t t = 0; t < gt.size(); ++t) {
      ++frames;
      correct += pred[t] == gt[t];
    }
  CHECK(report.acc ==
        Catch::Approx(100.0 * static_cast<double>(correct) / static_cast<double>(frames))
            .margin(1e-12));

  // Edit averaged per video.
  double edit_sum = 0.0;
  for (const auto& [pred, gt] : corpus) edit_sum += edit_score(pred, gt);
  CHECK(report.edit == Catch::Approx(edit_sum / 5.0).margin(1e-12));

  // F1 from pooled counts, recomputed independently via the oracle matcher.
  const double taus[3] = {0.10, 0.25, 0.50};
  const double reported[3] = {report.f1_10, report.f1_25, report.f1_50};
  for (int k = 0; k < 3; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& [pred, gt] : corpus) {
      const auto ps = segments_from_labels(pred);
      const auto gs = segments_from_labels(gt);
      const auto c = detail::f1_counts(ps, gs, taus[k], {});
      tp += c.tp;
      fp += c.fp;
      fn += c.fn;
    }
    const double p = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double r = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 = p + r > 0 ? 100.0 * 2.0 * p * r / (p + r) : 0.0;
    CHECK(reported[k] == Catch::Approx(f1).margin(1e-12));
  }
}

TEST_CASE("corpus edge cases") {
  CHECK_THROWS_AS(evaluate_corpus({}), DataError);

  const std::vector<int> v{1, 1, 2, 2};
  const MetricReport perfect = evaluate_corpus({{v, v}, {v, v}});
  CHECK(perfect.acc == 100.0);
  CHECK(perfect.edit == 100.0);
  CHECK(perfect.f1_50 == 100.0);

  // A single video reduces to the per-video metrics.
  Rng rng(9);
  const auto pred = random_runs(25, 4, rng);
  const auto gt = random_runs(25, 4, rng);
  const MetricReport single = evaluate_corpus({{pred, gt}});
  CHECK(single.acc == Catch::Approx(frame_accuracy(pred, gt)).margin(1e-12));
  CHECK(single.edit == Catch::Approx(edit_score(pred, gt)).margin(1e-12));
  CHECK(single.f1_10 == Catch::Approx(f1_at_k(pred, gt)[0]).margin(1e-12));
}

TEST_CASE("per-video f1 averaging differs from pooling when videos are uneven") {
  // Video 1 is perfect, video 2 is fully wrong but has many more segments.
  std::vector<int> p1{1, 1, 2, 2}, g1{1, 1, 2, 2};
  std::vector<int> p2, g2;
  for (int i = 0; i < 10; ++i) {
    p2.push_back(3);
    p2.push_back(4);
    g2.push_back(5);
    g2.push_back(6);
  }
  EvalOptions pooled;
  EvalOptions averaged;
  averaged.per_video_f1 = true;
  const auto rp = evaluate_corpus({{p1, g1}, {p2, g2}}, pooled);
  const auto ra = evaluate_corpus({{p1, g1}, {p2, g2}}, averaged);
  CHECK(ra.f1_50 == 50.0);  // mean of 100 and 0
  CHECK(rp.f1_50 < ra.f1_50);
}

TEST_CASE("ignored labels are excluded from all metrics") {
  EvalOptions opt;
  opt.ignore_labels = {0};

  // Background (0) frames wrong, everything else right.
  const std::vector<int> gt{0, 0, 1, 1, 2, 2, 0};
  const std::vector<int> pred{5, 5, 1, 1, 2, 2, 5};
  CHECK(frame_accuracy(pred, gt, opt) == 100.0);
  CHECK(frame_accuracy(pred, gt) < 100.0);

  // Edit on segment strings without the background entries. Prediction has
  // label 5 where gt has background; 5 is not ignored, so pred keeps those
  // segments: pred string [5,1,2,5], gt string [1,2].
  CHECK(edit_score(pred, gt, opt) == 50.0);

  // F1: ignored gt segments disappear; pred keeps its two 5-segments as FP.
  const auto counts = detail::f1_counts(segments_from_labels(pred),
                                        segments_from_labels(gt), 0.5, opt.ignore_labels);
  CHECK(counts.tp == 2);
  CHECK(counts.fp == 2);
  CHECK(counts.fn == 0);

  // All-ignored video: accuracy defined as 100, edit 100 on empty strings.
  CHECK(frame_accuracy({1, 2}, {0, 0}, opt) == 100.0);
  CHECK(edit_score({0, 0}, {0, 0}, opt) == 100.0);
}

TEST_CASE("report formatting uses four decimals") {
  MetricReport r;
  r.acc = 87.123456;
  r.edit = 70.0;
  r.f1_10 = 65.4321;
  r.f1_25 = 50.0;
  r.f1_50 = 33.33333;
  const std::string text = metric_report_text(r);
  CHECK(text.find("acc:   87.1235") != std::string::npos);
  CHECK(text.find("edit:  70.0000") != std::string::npos);
  const std::string json = metric_report_json(r);
  CHECK(json.find("\"f1_50\": 33.3333") != std::string::npos);
  CHECK(json.front() == '{');
  CHECK(json.back() == '}');
}
