#pragma once

// Evaluation: confusion matrix, support-weighted precision/recall/F1,
// one-vs-rest ROC and PR curves with areas, and CSV report emission.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "usfmae/errors.hpp"

namespace usfmae {

struct Prediction {
    int true_label;
    std::vector<double> scores;  // nonnegative, sum to 1

    int predicted() const {
        int best = 0;
        for (size_t j = 1; j < scores.size(); ++j)
            if (scores[j] > scores[best]) best = static_cast<int>(j);  // lowest index wins ties
        return best;
    }
};

using PredictionSet = std::vector<Prediction>;

struct CurvePoint {
    double threshold;
    double x;  // FPR or recall
    double y;  // TPR or precision
};

struct ClassCurve {
    std::vector<CurvePoint> points;
    double area = 0.0;
};

struct MetricsReport {
    std::vector<std::string> classes;
    std::vector<std::vector<long>> confusion;  // rows true, cols predicted
    double accuracy = 0.0;
    double precision = 0.0;  // support-weighted
    double recall = 0.0;
    double f1 = 0.0;
    std::vector<ClassCurve> roc;  // per class, one-vs-rest
    std::vector<ClassCurve> pr;
};

inline void validate_predictions(const PredictionSet& preds, int num_classes) {
    if (preds.empty()) throw DataError("empty prediction set");
    for (const auto& p : preds) {
        if (p.true_label < 0 || p.true_label >= num_classes)
            throw DataError("true label " + std::to_string(p.true_label) + " outside class set");
        if (static_cast<int>(p.scores.size()) != num_classes)
            throw DataError("score vector length mismatch");
        double s = 0.0;
        for (double v : p.scores) {
            if (v < 0.0) throw DataError("negative class score");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-6) throw DataError("class scores do not sum to 1");
    }
}

inline std::vector<std::vector<long>> confusion_matrix(const PredictionSet& preds, int num_classes) {
    validate_predictions(preds, num_classes);
    std::vector<std::vector<long>> m(static_cast<size_t>(num_classes),
                                     std::vector<long>(static_cast<size_t>(num_classes), 0));
    for (const auto& p : preds) m[static_cast<size_t>(p.true_label)][static_cast<size_t>(p.predicted())]++;
    return m;
}

struct WeightedMetrics {
    double accuracy, precision, recall, f1;
};

// per-class scores weighted by true-class support; zero-denominator
// precision/recall/F1 fall back to 0
inline WeightedMetrics weighted_metrics(const PredictionSet& preds, int num_classes) {
    const auto cm = confusion_matrix(preds, num_classes);
    const double total = static_cast<double>(preds.size());
    double trace = 0.0, wp = 0.0, wr = 0.0, wf = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        long tp = cm[c][c], fp = 0, fn = 0;
        for (int o = 0; o < num_classes; ++o) {
            if (o == c) continue;
            fp += cm[o][c];
            fn += cm[c][o];
        }
        trace += static_cast<double>(tp);
        const double support = static_cast<double>(tp + fn);
        const double prec = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
        const double rec = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
        const double f1 = (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        wp += support * prec;
        wr += support * rec;
        wf += support * f1;
    }
    return {trace / total, wp / total, wr / total, wf / total};
}

// one-vs-rest ROC: thresholds are the unique scores descending plus a
// +inf sentinel; area by the trapezoidal rule (equals the tie-adjusted
// Mann-Whitney statistic)
inline ClassCurve roc_curve_ovr(const PredictionSet& preds, int class_index) {
    long pos = 0, neg = 0;
    for (const auto& p : preds) (p.true_label == class_index ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw DataError("undefined ROC: class " + std::to_string(class_index) +
                        " lacks positives or negatives");
    std::vector<std::pair<double, bool>> scored;  // (score, is_positive)
    scored.reserve(preds.size());
    for (const auto& p : preds) scored.push_back({p.scores[static_cast<size_t>(class_index)], p.true_label == class_index});
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    ClassCurve curve;
    curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    long tp = 0, fp = 0;
    double prev_x = 0.0, prev_y = 0.0;
    size_t i = 0;
    while (i < scored.size()) {
        const double thr = scored[i].first;
        while (i < scored.size() && scored[i].first == thr) {
            (scored[i].second ? tp : fp)++;
            ++i;
        }
        const double x = static_cast<double>(fp) / neg;
        const double y = static_cast<double>(tp) / pos;
        curve.points.push_back({thr, x, y});
        curve.area += (x - prev_x) * (prev_y + y) * 0.5;
        prev_x = x;
        prev_y = y;
    }
    return curve;
}

// precision-recall with step-wise average precision sum (R_k - R_{k-1}) * P_k
inline ClassCurve pr_curve_ovr(const PredictionSet& preds, int class_index) {
    long pos = 0;
    for (const auto& p : preds)
        if (p.true_label == class_index) pos++;
    if (pos == 0) throw DataError("undefined PR curve: class " + std::to_string(class_index) + " has no positives");
    std::vector<std::pair<double, bool>> scored;
    scored.reserve(preds.size());
    for (const auto& p : preds) scored.push_back({p.scores[static_cast<size_t>(class_index)], p.true_label == class_index});
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    ClassCurve curve;
    long tp = 0;
    long predicted_pos = 0;
    double prev_recall = 0.0;
    size_t i = 0;
    while (i < scored.size()) {
        const double thr = scored[i].first;
        while (i < scored.size() && scored[i].first == thr) {
            if (scored[i].second) tp++;
            predicted_pos++;
            ++i;
        }
        const double recall = static_cast<double>(tp) / pos;
        const double precision = static_cast<double>(tp) / predicted_pos;
        curve.points.push_back({thr, recall, precision});
        curve.area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return curve;
}

inline MetricsReport build_report(const PredictionSet& preds, const std::vector<std::string>& classes) {
    const int nc = static_cast<int>(classes.size());
    MetricsReport rep;
    rep.classes = classes;
    rep.confusion = confusion_matrix(preds, nc);
    const auto wm = weighted_metrics(preds, nc);
    rep.accuracy = wm.accuracy;
    rep.precision = wm.precision;
    rep.recall = wm.recall;
    rep.f1 = wm.f1;
    for (int c = 0; c < nc; ++c) {
        rep.roc.push_back(roc_curve_ovr(preds, c));
        rep.pr.push_back(pr_curve_ovr(preds, c));
    }
    return rep;
}

inline void write_report_csvs(const MetricsReport& rep, const std::string& dir) {
    {
        std::ofstream out(dir + "/metrics.csv");
        if (!out) throw DataError("cannot write " + dir + "/metrics.csv");
        out << "metric,value\n";
        out << "accuracy," << rep.accuracy << "\n";
        out << "precision," << rep.precision << "\n";
        out << "recall," << rep.recall << "\n";
        out << "f1," << rep.f1 << "\n";
        for (size_t c = 0; c < rep.classes.size(); ++c) out << "roc_auc_" << rep.classes[c] << "," << rep.roc[c].area << "\n";
        for (size_t c = 0; c < rep.classes.size(); ++c) out << "pr_auc_" << rep.classes[c] << "," << rep.pr[c].area << "\n";
    }
    {
        std::ofstream out(dir + "/confusion.csv");
        if (!out) throw DataError("cannot write " + dir + "/confusion.csv");
        out << "true\\pred";
        for (const auto& c : rep.classes) out << "," << c;
        out << "\n";
        for (size_t i = 0; i < rep.classes.size(); ++i) {
            out << rep.classes[i];
            for (size_t j = 0; j < rep.classes.size(); ++j) out << "," << rep.confusion[i][j];
            out << "\n";
        }
    }
    for (size_t c = 0; c < rep.classes.size(); ++c) {
        {
            std::ofstream out(dir + "/roc_" + rep.classes[c] + ".csv");
            out << "threshold,fpr,tpr\n";
            for (const auto& p : rep.roc[c].points) out << p.threshold << "," << p.x << "," << p.y << "\n";
        }
        {
            std::ofstream out(dir + "/pr_" + rep.classes[c] + ".csv");
            out << "threshold,recall,precision\n";
            for (const auto& p : rep.pr[c].points) out << p.threshold << "," << p.x << "," << p.y << "\n";
        }
    }
}

}  // namespace usfmae
