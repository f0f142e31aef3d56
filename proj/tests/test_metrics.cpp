#include <catch2/catch_amalgamated.hpp>

#include "ssldet/metrics.hpp"

using namespace ssldet;

namespace {

PredictionRecord rec(std::vector<double> logits, int target, Box4 pred,
                     BoundingBox gt) {
  PredictionRecord p;
  p.logits = std::move(logits);
  p.target = target;
  p.pred_box = pred;
  p.target_box = gt;
  return p;
}

PredictionRecord rec_iou(double target_iou) {
  // pred (0,0,a,1) vs gt (0,0,1,1) has IoU exactly a.
  return rec({1.0}, 0, Box4{0.0, 0.0, target_iou, 1.0},
             BoundingBox{0.0, 0.0, 1.0, 1.0});
}

}  // namespace

TEST_CASE("mean_iou") {
  CHECK(mean_iou({rec_iou(1.0), rec_iou(1e-12)}) == Catch::Approx(0.5));
  std::vector<PredictionRecord> perfect(3, rec_iou(1.0));
  CHECK(mean_iou(perfect) == Catch::Approx(1.0));
  // 5-record fixture against scalar arithmetic.
  std::vector<PredictionRecord> five = {rec_iou(0.1), rec_iou(0.3),
                                        rec_iou(0.5), rec_iou(0.7),
                                        rec_iou(0.9)};
  CHECK(mean_iou(five) == Catch::Approx(0.5).margin(1e-9));
  CHECK_THROWS_AS(mean_iou({}), ContractError);
}

TEST_CASE("loc_accuracy uses strict inequality") {
  std::vector<PredictionRecord> preds = {rec_iou(0.6), rec_iou(0.4),
                                         rec_iou(0.8)};
  CHECK(loc_accuracy(preds, 0.5) == Catch::Approx(2.0 / 3.0));
  CHECK(loc_accuracy(preds, 0.7) == Catch::Approx(1.0 / 3.0));
  // Exactly at the threshold -> not counted.
  CHECK(loc_accuracy({rec_iou(0.5)}, 0.5) == 0.0);
  CHECK_THROWS_AS(loc_accuracy(preds, 0.0), ContractError);
  CHECK_THROWS_AS(loc_accuracy(preds, 1.0), ContractError);
}

TEST_CASE("loc_accuracy is monotone non-increasing in the threshold") {
  std::vector<PredictionRecord> preds;
  for (int i = 1; i < 20; ++i) preds.push_back(rec_iou(i / 20.0));
  double prev = 1.1;
  for (double th : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double a = loc_accuracy(preds, th);
    CHECK(a <= prev);
    prev = a;
  }
}

TEST_CASE("topn_accuracy ranking and tie-break") {
  const BoundingBox gt{0.0, 0.0, 1.0, 1.0};
  const Box4 pb{0.0, 0.0, 1.0, 1.0};
  // Targets ranked 1st, 2nd, 3rd, 1st.
  std::vector<PredictionRecord> preds = {
      rec({3.0, 1.0, 0.0}, 0, pb, gt),
      rec({3.0, 1.0, 0.0}, 1, pb, gt),
      rec({3.0, 1.0, 0.0}, 2, pb, gt),
      rec({0.0, 0.0, 5.0}, 2, pb, gt),
  };
  CHECK(topn_accuracy(preds, 1) == Catch::Approx(0.5));
  CHECK(topn_accuracy(preds, 2) == Catch::Approx(0.75));
  CHECK(topn_accuracy(preds, 3) == Catch::Approx(1.0));

  // Uniform logits: ascending-index tie-break puts class 0 first.
  std::vector<PredictionRecord> uni = {rec({1.0, 1.0, 1.0}, 0, pb, gt)};
  CHECK(topn_accuracy(uni, 1) == Catch::Approx(1.0));
  std::vector<PredictionRecord> uni2 = {rec({1.0, 1.0, 1.0}, 2, pb, gt)};
  CHECK(topn_accuracy(uni2, 1) == 0.0);
  CHECK(topn_accuracy(uni2, 3) == 1.0);

  CHECK_THROWS_AS(topn_accuracy(preds, 0), ContractError);
  CHECK_THROWS_AS(topn_accuracy(preds, 4), ContractError);
}

TEST_CASE("topn_accuracy is monotone non-decreasing in N") {
  const BoundingBox gt{0.0, 0.0, 1.0, 1.0};
  const Box4 pb{0.0, 0.0, 1.0, 1.0};
  std::vector<PredictionRecord> preds;
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n01;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> logits(7);
    for (auto& v : logits) v = n01(rng);
    preds.push_back(rec(logits, static_cast<int>(rng() % 7), pb, gt));
  }
  double prev = -1.0;
  for (int n = 1; n <= 7; ++n) {
    const double a = topn_accuracy(preds, n);
    CHECK(a >= prev);
    prev = a;
  }
  CHECK(prev == 1.0);  // N = K is exhaustive
}

TEST_CASE("build_report and validation") {
  const BoundingBox gt{0.0, 0.0, 1.0, 1.0};
  std::vector<PredictionRecord> preds = {
      rec({2.0, 1.0, 0.0}, 0, Box4{0.0, 0.0, 1.0, 1.0}, gt),
      rec({2.0, 1.0, 0.0}, 1, Box4{0.0, 0.0, 0.6, 1.0}, gt)};

  ReportContext ctx{"TINY", "ssl", 10, 7};
  EvalReport r = build_report(preds, ctx);
  CHECK(r.top1 == Catch::Approx(0.5));
  CHECK(r.top3 == Catch::Approx(1.0));
  CHECK_FALSE(r.top5.has_value());  // only 3 classes
  CHECK(r.mean_iou == Catch::Approx(0.8));
  CHECK(r.acc_iou_07 <= r.acc_iou_05);

  // 6-class logits -> top5 column appears.
  std::vector<PredictionRecord> six = {
      rec({1, 2, 3, 4, 5, 6}, 5, Box4{0.0, 0.0, 1.0, 1.0}, gt)};
  EvalReport r6 = build_report(six, {"FULL", "baseline", 3, 7});
  CHECK(r6.top5.has_value());

  CHECK_THROWS_AS(build_report(preds, {"", "ssl", 10, 7}), ContractError);
  CHECK_THROWS_AS(build_report({}, ctx), ContractError);

  EvalReport bad = r;
  bad.acc_iou_05 = 0.1;
  bad.acc_iou_07 = 0.5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = r;
  bad.top1 = 1.5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = r;
  bad.method = "";
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("report json round trip") {
  EvalReport r;
  r.n_per_class = 500;
  r.method = "ssl";
  r.dataset = "TINY";
  r.seed = 7;
  r.top1 = 0.7037;
  r.top3 = 0.9675;
  r.mean_iou = 0.5371;
  r.acc_iou_05 = 0.6157;
  r.acc_iou_07 = 0.3120;
  EvalReport back = report_from_json(to_json(r));
  CHECK(back.top1 == r.top1);
  CHECK(back.mean_iou == r.mean_iou);
  CHECK_FALSE(back.top5.has_value());
  CHECK(to_json(r)["loc_accuracy_inequality"] == "strict");
}

TEST_CASE("csv layout follows the table column order") {
  CHECK(report_csv_header(false) ==
        "n,method,top1,top3,mean_iou,acc_iou_05,acc_iou_07");
  CHECK(report_csv_header(true) ==
        "n,method,top1,top3,top5,mean_iou,acc_iou_05,acc_iou_07");
  EvalReport r;
  r.n_per_class = 500;
  r.method = "ssl";
  r.dataset = "TINY";
  r.top1 = 0.7037;
  r.top3 = 0.9675;
  r.mean_iou = 0.5371;
  r.acc_iou_05 = 0.6157;
  r.acc_iou_07 = 0.3120;
  CHECK(report_csv_row(r) == "500,ssl,0.7037,0.9675,0.5371,0.6157,0.312");
}

TEST_CASE("compare_methods reproduces known differences") {
  auto make = [](std::string method, int n, double miou) {
    EvalReport r;
    r.method = std::move(method);
    r.dataset = "FULL";
    r.n_per_class = n;
    r.top1 = 0.5;
    r.top3 = 0.6;
    r.top5 = 0.7;
    r.mean_iou = miou;
    r.acc_iou_05 = 0.4;
    r.acc_iou_07 = 0.2;
    return r;
  };
  std::vector<EvalReport> reports = {make("ssl", 3, 0.4169),
                                     make("baseline", 3, 0.1685)};
  auto diffs = compare_methods(reports, "ssl", "baseline");
  REQUIRE(diffs.size() == 1);
  CHECK(diffs[0].n_per_class == 3);
  double miou_diff = 0.0;
  for (const auto& [name, v] : diffs[0].diffs)
    if (name == "mean_iou") miou_diff = v;
  CHECK(miou_diff == Catch::Approx(0.2484).margin(1e-4));

  CHECK_THROWS_AS(compare_methods({make("ssl", 3, 0.4)}, "ssl", "baseline"),
                  MissingArtifactError);
}

TEST_CASE("rendered comparison table carries all columns") {
  EvalReport r;
  r.method = "ssl";
  r.dataset = "TINY";
  r.n_per_class = 500;
  r.top1 = 0.7037;
  r.top3 = 0.9675;
  r.mean_iou = 0.5371;
  r.acc_iou_05 = 0.6157;
  r.acc_iou_07 = 0.3120;
  const std::string table = render_comparison_table({r});
  CHECK(table.find("top1") != std::string::npos);
  CHECK(table.find("acc_iou_07") != std::string::npos);
  CHECK(table.find("0.7037") != std::string::npos);
  CHECK(table.find("0.3120") != std::string::npos);
}
