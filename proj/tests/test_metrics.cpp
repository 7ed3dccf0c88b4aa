#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "usfmae/metrics.hpp"
#include "usfmae/rng.hpp"

using namespace usfmae;

namespace {

Prediction make_pred(int true_label, std::vector<double> scores) {
    double s = 0;
    for (double v : scores) s += v;
    for (auto& v : scores) v /= s;
    return {true_label, std::move(scores)};
}

PredictionSet random_preds(int n, int classes, Rng& rng) {
    PredictionSet out;
    for (int i = 0; i < n; ++i) {
        std::vector<double> scores(static_cast<size_t>(classes));
        for (auto& v : scores) v = rng.uniform(0.01, 1.0);
        out.push_back(make_pred(rng.uniform_int(classes), std::move(scores)));
    }
    return out;
}

// brute-force pairwise rank comparison (ties count half)
double auc_rank_oracle(const PredictionSet& preds, int cls) {
    double wins = 0;
    long pairs = 0;
    for (const auto& p : preds) {
        if (p.true_label != cls) continue;
        for (const auto& q : preds) {
            if (q.true_label == cls) continue;
            ++pairs;
            const double sp = p.scores[static_cast<size_t>(cls)], sq = q.scores[static_cast<size_t>(cls)];
            if (sp > sq) wins += 1.0;
            else if (sp == sq) wins += 0.5;
        }
    }
    return wins / pairs;
}

// exhaustive threshold sweep for average precision
double ap_threshold_oracle(const PredictionSet& preds, int cls) {
    std::vector<double> thresholds;
    for (const auto& p : preds) thresholds.push_back(p.scores[static_cast<size_t>(cls)]);
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    long pos = 0;
    for (const auto& p : preds)
        if (p.true_label == cls) ++pos;
    double ap = 0, prev_recall = 0;
    for (double thr : thresholds) {
        long tp = 0, predicted = 0;
        for (const auto& p : preds) {
            if (p.scores[static_cast<size_t>(cls)] >= thr) {
                ++predicted;
                if (p.true_label == cls) ++tp;
            }
        }
        const double recall = static_cast<double>(tp) / pos;
        const double precision = static_cast<double>(tp) / predicted;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

}  // namespace

TEST_CASE("confusion matrix basics") {
    PredictionSet perfect;
    for (int c = 0; c < 5; ++c) {
        std::vector<double> s(5, 0.01);
        s[static_cast<size_t>(c)] = 1.0;
        perfect.push_back(make_pred(c, s));
    }
    auto cm = confusion_matrix(perfect, 5);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) CHECK(cm[i][j] == (i == j ? 1 : 0));

    PredictionSet one{make_pred(0, {0.1, 0.1, 0.7, 0.05, 0.05})};
    auto cm2 = confusion_matrix(one, 5);
    CHECK(cm2[0][2] == 1);

    PredictionSet bad{make_pred(7, {1, 0, 0, 0, 0})};
    CHECK_THROWS_AS(confusion_matrix(bad, 5), DataError);
}

TEST_CASE("confusion matrix matches brute-force recount") {
    Rng rng(8);
    auto preds = random_preds(50, 5, rng);
    auto cm = confusion_matrix(preds, 5);
    long recount[5][5] = {};
    for (const auto& p : preds) recount[p.true_label][p.predicted()]++;
    long total = 0;
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            CHECK(cm[i][j] == recount[i][j]);
            total += cm[i][j];
        }
    CHECK(total == 50);
}

TEST_CASE("weighted metrics on hand-computed cases") {
    PredictionSet perfect;
    for (int c = 0; c < 3; ++c) {
        std::vector<double> s(3, 0.0);
        s[static_cast<size_t>(c)] = 1.0;
        perfect.push_back(make_pred(c, s));
    }
    auto wm = weighted_metrics(perfect, 3);
    CHECK(wm.accuracy == 1.0);
    CHECK(wm.precision == 1.0);
    CHECK(wm.recall == 1.0);
    CHECK(wm.f1 == 1.0);

    // 2 classes, supports (3,1), everything predicted class 0
    PredictionSet collapsed;
    for (int i = 0; i < 3; ++i) collapsed.push_back(make_pred(0, {0.9, 0.1}));
    collapsed.push_back(make_pred(1, {0.9, 0.1}));
    auto wm2 = weighted_metrics(collapsed, 2);
    CHECK(wm2.accuracy == Catch::Approx(0.75));
    CHECK(wm2.recall == Catch::Approx(0.75));
    CHECK(wm2.precision == Catch::Approx(0.5625));
    CHECK(wm2.f1 == Catch::Approx(0.642857142857).epsilon(1e-6));
}

TEST_CASE("weighted recall equals accuracy on random sets") {
    Rng rng(19);
    for (int t = 0; t < 200; ++t) {
        auto preds = random_preds(1 + rng.uniform_int(40), 5, rng);
        auto wm = weighted_metrics(preds, 5);
        CHECK(wm.recall == wm.accuracy);  // exact algebraic identity
    }
}

TEST_CASE("ROC endpoints") {
    PredictionSet sep;
    sep.push_back(make_pred(0, {0.9, 0.1}));
    sep.push_back(make_pred(0, {0.8, 0.2}));
    sep.push_back(make_pred(1, {0.2, 0.8}));
    CHECK(roc_curve_ovr(sep, 0).area == Catch::Approx(1.0));

    PredictionSet ties;
    ties.push_back(make_pred(0, {0.5, 0.5}));
    ties.push_back(make_pred(1, {0.5, 0.5}));
    ties.push_back(make_pred(0, {0.5, 0.5}));
    CHECK(roc_curve_ovr(ties, 0).area == Catch::Approx(0.5));

    PredictionSet single{make_pred(0, {1.0, 0.0})};
    CHECK_THROWS_AS(roc_curve_ovr(single, 0), DataError);
    try {
        roc_curve_ovr(single, 0);
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("undefined ROC") != std::string::npos);
    }
}

TEST_CASE("trapezoidal AUC equals the pairwise rank oracle") {
    Rng rng(23);
    for (int t = 0; t < 30; ++t) {
        auto preds = random_preds(20, 3, rng);
        for (int cls = 0; cls < 3; ++cls) {
            long pos = 0;
            for (const auto& p : preds)
                if (p.true_label == cls) ++pos;
            if (pos == 0 || pos == 20) continue;
            CHECK(std::abs(roc_curve_ovr(preds, cls).area - auc_rank_oracle(preds, cls)) < 1e-9);
        }
    }
}

TEST_CASE("ROC AUC is invariant to monotone score transforms") {
    Rng rng(29);
    auto preds = random_preds(25, 3, rng);
    const double before = roc_curve_ovr(preds, 1).area;
    for (auto& p : preds) p.scores[1] = std::tanh(3.0 * p.scores[1]);  // strictly increasing
    // scores no longer sum to 1; bypass validation by comparing the curve math only
    PredictionSet renorm = preds;
    CHECK(std::abs(roc_curve_ovr(renorm, 1).area - before) < 1e-12);
}

TEST_CASE("PR curve cases") {
    PredictionSet perfect;
    perfect.push_back(make_pred(0, {0.9, 0.1}));
    perfect.push_back(make_pred(1, {0.2, 0.8}));
    CHECK(pr_curve_ovr(perfect, 0).area == Catch::Approx(1.0));

    // worst ranking: the single positive scored below n-1 negatives
    const int n = 5;
    PredictionSet worst;
    worst.push_back(make_pred(0, {0.0, 1.0}));
    for (int i = 0; i < n - 1; ++i) worst.push_back(make_pred(1, {1.0, 0.0}));
    CHECK(pr_curve_ovr(worst, 0).area == Catch::Approx(1.0 / n));

    PredictionSet nopos{make_pred(1, {0.5, 0.5})};
    CHECK_THROWS_AS(pr_curve_ovr(nopos, 0), DataError);
}

TEST_CASE("average precision matches the exhaustive threshold oracle") {
    Rng rng(31);
    for (int t = 0; t < 30; ++t) {
        auto preds = random_preds(15, 3, rng);
        for (int cls = 0; cls < 3; ++cls) {
            long pos = 0;
            for (const auto& p : preds)
                if (p.true_label == cls) ++pos;
            if (pos == 0) continue;
            CHECK(std::abs(pr_curve_ovr(preds, cls).area - ap_threshold_oracle(preds, cls)) < 1e-9);
        }
    }
}

TEST_CASE("metrics are invariant under sample reordering") {
    Rng rng(37);
    auto preds = random_preds(30, 5, rng);
    auto shuffled = preds;
    std::reverse(shuffled.begin(), shuffled.end());
    auto a = weighted_metrics(preds, 5);
    auto b = weighted_metrics(shuffled, 5);
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.precision == b.precision);
    CHECK(a.f1 == b.f1);
}

TEST_CASE("confusion row sums equal per-class supports") {
    Rng rng(41);
    auto preds = random_preds(60, 5, rng);
    auto cm = confusion_matrix(preds, 5);
    for (int c = 0; c < 5; ++c) {
        long support = 0;
        for (const auto& p : preds)
            if (p.true_label == c) ++support;
        long row = 0;
        for (int j = 0; j < 5; ++j) row += cm[c][j];
        CHECK(row == support);
    }
}

TEST_CASE("argmax prediction breaks ties toward the lowest index") {
    Prediction p{0, {0.25, 0.25, 0.25, 0.25}};
    CHECK(p.predicted() == 0);
}
