#include "handgcn/dataset_io.hpp"
#include "handgcn/errors.hpp"
#include "handgcn/evaluation.hpp"

#include "support/test_support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

using namespace handgcn;
using namespace handgcn::test;

namespace {

std::vector<bool> as_bool(const std::vector<int>& v) { return {v.begin(), v.end()}; }

double auc_of(const std::vector<double>& s, const std::vector<bool>& pos) {
    std::unique_ptr<bool[]> flags(new bool[pos.size()]);
    std::copy(pos.begin(), pos.end(), flags.get());
    return binary_auc(s, std::span<const bool>(flags.get(), pos.size()));
}

} // namespace

TEST_CASE("confusion_matrix") {
    const std::vector<std::size_t> labels{0, 1, 2, 2, 1, 0};
    const auto diag = confusion_matrix(labels, labels, 3);
    CHECK(diag.trace() == 6);
    CHECK(diag.total() == 6);
    CHECK(diag(2, 2) == 2);
    CHECK(diag(0, 1) == 0);

    const std::vector<std::size_t> zeros(6, 0);
    const auto col = confusion_matrix(zeros, labels, 3);
    CHECK(col.predicted(0) == 6);
    CHECK(col.predicted(1) == 0);
    CHECK(col.actual(2) == 2);

    const std::vector<std::size_t> preds{0, 1, 1, 2, 0, 0};
    const auto cm = confusion_matrix(preds, labels, 3);
    CHECK(cm.trace() == 4);
    CHECK(classification_metrics(cm).accuracy == 4.0 / 6.0);
    CHECK(cm(2, 1) == 1);
    CHECK(cm(1, 0) == 1);

    CHECK_THROWS_AS(confusion_matrix(std::vector<std::size_t>{3}, std::vector<std::size_t>{0}, 3), LabelOutOfRange);
    CHECK_THROWS_AS(confusion_matrix(std::vector<std::size_t>{0, 1}, std::vector<std::size_t>{0}, 3),
                    DimensionMismatch);
}

TEST_CASE("classification_metrics") {
    SUBCASE("perfect") {
        const std::vector<std::size_t> y{0, 1, 2, 3, 3};
        const auto m = classification_metrics(confusion_matrix(y, y, 29));
        CHECK(m.accuracy == 1.0);
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
    }
    SUBCASE("one class entirely mistaken for the other") {
        std::vector<std::size_t> y, p;
        for (int i = 0; i < 10; ++i) {
            y.push_back(0);
            p.push_back(1);
            y.push_back(1);
            p.push_back(1);
        }
        const auto m = classification_metrics(confusion_matrix(p, y, 2));
        // class 0: nothing predicted, P = R = F1 = 0; class 1: P = 1/2, R = 1, F1 = 2/3
        CHECK(m.accuracy == 0.5);
        CHECK(m.class_precision[0] == 0.0);
        CHECK(m.class_precision[1] == 0.5);
        CHECK(m.class_recall[1] == 1.0);
        CHECK(m.class_f1[1] == doctest::Approx(2.0 / 3.0));
        CHECK(m.precision == 0.25);
        CHECK(m.recall == 0.5);
        CHECK(m.f1 == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("absent classes stay out of the macro mean") {
        const std::vector<std::size_t> y{0, 0, 1, 1}, p{0, 1, 1, 1};
        const auto m = classification_metrics(confusion_matrix(p, y, 29));
        CHECK(m.precision == doctest::Approx((1.0 + 2.0 / 3.0) / 2.0));
        CHECK(m.recall == doctest::Approx((0.5 + 1.0) / 2.0));
    }
    SUBCASE("a class only ever predicted counts with recall 0") {
        const std::vector<std::size_t> y{0, 0, 0}, p{0, 0, 2};
        const auto m = classification_metrics(confusion_matrix(p, y, 3));
        CHECK(m.class_precision[2] == 0.0);
        CHECK(m.class_recall[2] == 0.0);
        CHECK(m.precision == doctest::Approx(0.5));
        CHECK(m.recall == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("accuracy is trace over total") {
        RngStream rng(3);
        std::vector<std::size_t> y(97), p(97);
        for (std::size_t i = 0; i < 97; ++i) {
            y[i] = rng.below(29);
            p[i] = rng.below(29);
        }
        const auto cm = confusion_matrix(p, y);
        CHECK(classification_metrics(cm).accuracy == static_cast<double>(cm.trace()) / 97.0);
    }
}

TEST_CASE("binary and one-vs-rest AUC") {
    SUBCASE("perfect and reversed") {
        const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
        CHECK(auc_of(s, as_bool({0, 0, 1, 1})) == 1.0);
        CHECK(auc_of(s, as_bool({1, 1, 0, 0})) == 0.0);
        CHECK(auc_of(std::vector<double>(4, 0.5), as_bool({1, 0, 1, 0})) == 0.5);
        CHECK(std::isnan(auc_of(s, as_bool({1, 1, 1, 1}))));
    }
    SUBCASE("20 samples, 3 classes against the pairwise oracle") {
        RngStream rng(4);
        for (int trial = 0; trial < 20; ++trial) {
            Matrix scores(20, 3);
            std::vector<std::size_t> y(20);
            for (std::size_t i = 0; i < 20; ++i) {
                y[i] = i % 3;
                for (std::size_t c = 0; c < 3; ++c) scores(i, c) = std::round(rng.uniform() * 5) / 5;
            }
            const auto got = roc_auc_ovr(scores, y);
            for (std::size_t c = 0; c < 3; ++c) {
                std::vector<double> col(20);
                std::vector<bool> pos(20);
                for (std::size_t i = 0; i < 20; ++i) {
                    col[i] = scores(i, c);
                    pos[i] = y[i] == c;
                }
                CHECK(got.class_auc[c] == pairwise_auc(col, pos));
            }
        }
    }
    SUBCASE("invariant under monotone transforms, symmetric under flips") {
        RngStream rng(5);
        std::vector<double> s(40), t(40), flipped(40);
        std::vector<bool> pos(40), neg(40);
        for (std::size_t i = 0; i < 40; ++i) {
            s[i] = std::round(rng.uniform() * 10) / 10;
            t[i] = std::exp(3 * s[i]) - 7;
            flipped[i] = 1 - s[i];
            pos[i] = rng.uniform() < 0.4;
            neg[i] = !pos[i];
        }
        CHECK(auc_of(s, pos) == auc_of(t, pos));
        CHECK(auc_of(s, pos) == doctest::Approx(auc_of(flipped, neg)).epsilon(1e-15));
    }
    SUBCASE("random scores average one half") {
        RngStream rng(6);
        double total = 0.0;
        std::vector<bool> pos(20);
        for (std::size_t i = 0; i < 20; ++i) pos[i] = i < 10;
        std::vector<double> s(20);
        for (int r = 0; r < 10000; ++r) {
            for (double& v : s) v = rng.uniform();
            total += auc_of(s, pos);
        }
        CHECK(std::abs(total / 10000 - 0.5) < 0.02);
    }
    SUBCASE("macro, weighted and skipped classes") {
        // class 2 never occurs, so it has no positives
        const Matrix scores{{0.9, 0.1, 0.0}, {0.8, 0.2, 0.0}, {0.3, 0.7, 0.0}, {0.6, 0.4, 0.0}};
        const std::vector<std::size_t> y{0, 0, 1, 0};
        const auto r = roc_auc_ovr(scores, y);
        CHECK(r.skipped_classes == std::vector<std::size_t>{2});
        CHECK(std::isnan(r.class_auc[2]));
        CHECK(r.class_auc[0] == 1.0);
        CHECK(r.class_auc[1] == 1.0);
        CHECK(r.macro_auc == 1.0);
        CHECK(r.weighted_auc == 1.0);

        const Matrix mixed{{0.9, 0.1}, {0.2, 0.8}, {0.6, 0.4}, {0.5, 0.5}};
        const std::vector<std::size_t> y2{0, 0, 1, 1};
        const auto m = roc_auc_ovr(mixed, y2);
        CHECK(m.class_auc[0] == 0.5);
        CHECK(m.class_auc[1] == 0.5);
    }
}

TEST_CASE("roc_curve") {
    const std::vector<double> s{0.9, 0.8, 0.8, 0.3, 0.1};
    const auto pts = roc_curve(s, std::span<const bool>(std::unique_ptr<bool[]>(new bool[5]{1, 1, 0, 0, 1}).get(), 5));
    REQUIRE(pts.size() == 5);
    CHECK(pts.front().fpr == 0.0);
    CHECK(pts.front().tpr == 0.0);
    CHECK(pts.back().fpr == 1.0);
    CHECK(pts.back().tpr == 1.0);
    CHECK(pts[2].fpr == 0.5);
    CHECK(pts[2].tpr == doctest::Approx(2.0 / 3.0));
    for (std::size_t i = 1; i < pts.size(); ++i) {
        CHECK(pts[i].fpr >= pts[i - 1].fpr);
        CHECK(pts[i].tpr >= pts[i - 1].tpr);
    }
}

TEST_CASE("stratified_kfold") {
    SUBCASE("29 classes of 10 over 5 folds") {
        std::vector<std::size_t> y;
        for (std::size_t c = 0; c < 29; ++c)
            for (int i = 0; i < 10; ++i) y.push_back(c);
        const auto split = stratified_kfold(y, 5, 1);
        REQUIRE(split.folds.size() == 5);
        for (const auto& f : split.folds) {
            std::vector<int> per(29, 0);
            for (std::size_t i : f) ++per[y[i]];
            for (int n : per) CHECK(n == 2);
        }
        CHECK(split.train_only.empty());
    }
    SUBCASE("a singleton class trains in every fold") {
        std::vector<std::size_t> y(50, 0);
        for (std::size_t i = 25; i < 50; ++i) y[i] = 1;
        y.push_back(27);
        const auto split = stratified_kfold(y, 5, 2);
        CHECK(split.rare_classes == std::vector<std::size_t>{27});
        CHECK(split.train_only == std::vector<std::size_t>{50});
        for (std::size_t f = 0; f < 5; ++f) {
            const auto tr = split.train_indices(f);
            CHECK(std::count(tr.begin(), tr.end(), 50) == 1);
            CHECK(std::count(split.folds[f].begin(), split.folds[f].end(), 50) == 0);
        }
    }
    SUBCASE("always a partition with balanced classes") {
        RngStream rng(7);
        for (int trial = 0; trial < 30; ++trial) {
            const std::size_t n = 5 + rng.below(200), k = 2 + rng.below(8);
            if (n < k) continue;
            std::vector<std::size_t> y(n);
            for (auto& v : y) v = rng.below(1 + rng.below(29));
            const auto split = stratified_kfold(y, k, trial);
            std::vector<int> seen(n, 0);
            for (std::size_t i : split.train_only) ++seen[i];
            for (const auto& f : split.folds)
                for (std::size_t i : f) ++seen[i];
            for (int s : seen) CHECK(s == 1);

            std::map<std::size_t, std::vector<std::size_t>> per_class;
            for (std::size_t f = 0; f < k; ++f)
                for (std::size_t c = 0; c < 29; ++c)
                    per_class[c].push_back(static_cast<std::size_t>(
                        std::count_if(split.folds[f].begin(), split.folds[f].end(),
                                      [&](std::size_t i) { return y[i] == c; })));
            for (auto& [c, sizes] : per_class)
                CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <=
                      1);
            std::vector<std::size_t> totals;
            for (const auto& f : split.folds) totals.push_back(f.size());
            CHECK(*std::max_element(totals.begin(), totals.end()) - *std::min_element(totals.begin(), totals.end()) <=
                  1);
        }
    }
    SUBCASE("seeded and validated") {
        std::vector<std::size_t> y(40);
        for (std::size_t i = 0; i < 40; ++i) y[i] = i % 4;
        CHECK(stratified_kfold(y, 5, 9).folds == stratified_kfold(y, 5, 9).folds);
        CHECK_FALSE(stratified_kfold(y, 5, 9).folds == stratified_kfold(y, 5, 10).folds);
        CHECK_THROWS_AS(stratified_kfold(std::vector<std::size_t>{0, 1, 2}, 5, 1), TooFewSamples);
        CHECK_THROWS_AS(stratified_kfold(y, 1, 1), TooFewSamples);
    }
}

TEST_CASE("stratified_holdout") {
    std::vector<std::size_t> y;
    for (int i = 0; i < 10; ++i) y.push_back(0);
    for (int i = 0; i < 3; ++i) y.push_back(1);
    y.push_back(2);
    const auto h = stratified_holdout(y, 0.2, 5);
    std::vector<int> held(3, 0);
    for (std::size_t i : h.held_out) ++held[y[i]];
    CHECK(held == std::vector<int>{2, 1, 0});
    CHECK(h.train.size() + h.held_out.size() == y.size());
    std::set<std::size_t> all(h.train.begin(), h.train.end());
    all.insert(h.held_out.begin(), h.held_out.end());
    CHECK(all.size() == y.size());
    CHECK_THROWS_AS(stratified_holdout(y, 1.0, 5), DataError);
}

TEST_CASE("cross_validate on a small synthetic set") {
    std::vector<PoseGraph> data;
    for (const auto& p : synth_dataset(4, 25, 0.02, 11)) data.push_back(preprocess(p));
    TrainConfig cfg;
    cfg.hidden_dim = 8;
    cfg.max_epochs = 3;
    std::size_t callbacks = 0;
    const auto res = cross_validate(data, cfg, 5, [&](std::size_t, const EpochStats&) { ++callbacks; });
    REQUIRE(res.folds.size() == 5);
    std::size_t epochs = 0;
    for (std::size_t f = 0; f < 5; ++f) {
        const auto& fr = res.folds[f];
        CHECK(fr.fold == f);
        CHECK(fr.error.empty());
        CHECK(fr.test_size == 20);
        CHECK(fr.train_size == 80);
        REQUIRE(fr.testing.has_value());
        REQUIRE(fr.training.has_value());
        CHECK(fr.testing->report.split == "testing");
        CHECK(fr.training->report.split == "training");
        CHECK(fr.testing->labels.size() == 20);
        CHECK(fr.training->labels.size() == 80);
        CHECK(fr.testing->confusion.total() == 20);
        CHECK(fr.epochs >= 1);
        CHECK(fr.epochs <= 3);
        epochs += fr.epochs;
    }
    CHECK(callbacks == epochs);

    const auto again = cross_validate(data, cfg, 5);
    for (std::size_t f = 0; f < 5; ++f) {
        CHECK(again.folds[f].testing->report == res.folds[f].testing->report);
        CHECK(again.folds[f].training->report == res.folds[f].training->report);
    }
    const auto names = ClassVocabulary::standard().names();
    CHECK(cross_validation_report(again, names) == cross_validation_report(res, names));

    std::vector<MetricsReport> rows;
    for (const auto& f : res.folds) rows.push_back(f.testing->report);
    const std::string csv = metrics_csv(rows);
    CHECK(csv.rfind("fold,split,accuracy,precision,recall,f1,macro_auc,weighted_auc\n0,testing,", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);

    const auto doc = nlohmann::json::parse(cross_validation_report(res, names));
    CHECK(doc["folds"].size() == 5);
    CHECK(doc["classes"][26]["name"] == "DELETE");
    CHECK(doc["folds"][0]["testing"]["confusion_matrix"].size() == 29);
    CHECK(doc["folds"][0]["testing"]["metrics"]["accuracy"].get<double>() == res.folds[0].testing->report.accuracy);
}

TEST_CASE("a failing fold does not stop the run") {
    std::vector<PoseGraph> data;
    for (const auto& p : synth_dataset(3, 10, 0.02, 12)) data.push_back(preprocess(p));
    // a lone sample of its own class trains in every fold
    PoseGraph bad = data.front();
    bad.label = 20;
    bad.features *= 1e308;
    data.push_back(bad);
    TrainConfig cfg;
    cfg.hidden_dim = 4;
    cfg.max_epochs = 2;
    const auto res = cross_validate(data, cfg, 5);
    CHECK(res.rare_classes == std::vector<std::size_t>{20});
    REQUIRE(res.folds.size() == 5);
    for (const auto& f : res.folds) {
        CHECK_FALSE(f.error.empty());
        CHECK_FALSE(f.testing.has_value());
    }
    CHECK_THROWS_AS(cross_validate({}, cfg, 5), EmptyDataset);
}

TEST_CASE("evaluation_report") {
    std::vector<PoseGraph> data;
    for (const auto& p : synth_dataset(3, 4, 0.02, 13)) data.push_back(preprocess(p));
    ModelConfig mc;
    mc.hidden_dim = 4;
    RngStream rng(1);
    const auto params = init_params(mc, rng);
    const auto e = evaluate_split(data, params, mc, "testing", 0);
    CHECK(e.probabilities.rows() == 12);
    CHECK(e.confusion.total() == 12);
    CHECK(e.report.accuracy == classification_metrics(e.confusion).accuracy);
    const auto doc = nlohmann::json::parse(evaluation_report(e, ClassVocabulary::standard().names()));
    CHECK(doc["roc_curves"].size() == 29);
    CHECK(doc["result"]["samples"] == 12);
}
