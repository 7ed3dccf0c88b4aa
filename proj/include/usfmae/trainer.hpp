#pragma once

// Pretraining and fine-tuning loops plus the hyperparameter grid search.
// Single-threaded over optimizer steps; (seed, data, plan) pin every
// logged number and checkpoint bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "usfmae/errors.hpp"
#include "usfmae/model.hpp"
#include "usfmae/optimizer.hpp"
#include "usfmae/preprocess.hpp"
#include "usfmae/rng.hpp"
#include "usfmae/tensor.hpp"

namespace usfmae {

enum class TrainMode { pretrain, finetune };

struct TrainPlan {
    int epochs = 120;
    int batch_size = 64;
    double base_lr = 5e-4;
    double weight_decay = 0.01;
    double warmup_fraction = 0.1;
    uint64_t seed = 0;
    TrainMode mode = TrainMode::pretrain;
    bool augment_train = true;  // fine-tuning only; pretraining never augments

    void validate() const {
        std::vector<std::string> bad;
        if (epochs < 1) bad.push_back("epochs must be >= 1");
        if (batch_size < 1) bad.push_back("batch_size must be >= 1");
        if (base_lr < 0) bad.push_back("base_lr must be >= 0");
        if (warmup_fraction < 0 || warmup_fraction >= 1) bad.push_back("warmup_fraction must be in [0,1)");
        if (!bad.empty()) {
            std::string msg = "invalid train plan:";
            for (const auto& b : bad) msg += " " + b + ";";
            throw ConfigError(msg);
        }
    }
};

struct LogRow {
    int epoch;
    std::string split;
    std::string metric;
    double value;
};

struct PretrainResult {
    std::vector<double> epoch_loss;
    std::vector<LogRow> log;
};

namespace detail {

inline std::vector<std::vector<int>> make_batches(int n, int batch_size, Rng& rng) {
    std::vector<int> order = rng.permutation(n);
    std::vector<std::vector<int>> batches;
    for (int i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + i, order.begin() + std::min(i + batch_size, n));
    }
    return batches;  // last incomplete batch kept
}

template <class Real>
void snapshot_params(const VitMae<Real>& m, std::vector<std::vector<Real>>& snap) {
    snap.clear();
    for (const auto& name : m.param_names()) snap.push_back(m.param(name).data());
}

template <class Real>
void restore_params(VitMae<Real>& m, const std::vector<std::vector<Real>>& snap) {
    size_t i = 0;
    for (const auto& name : m.param_names()) m.param(name).data() = snap[i++];
}

}  // namespace detail

// MAE pretraining over preprocessed image tensors. A non-finite loss
// aborts the run; parameters roll back to the end of the last finished
// epoch before the error propagates.
template <class Real>
PretrainResult pretrain(VitMae<Real>& model, const std::vector<Tensor<Real>>& corpus, const TrainPlan& plan) {
    plan.validate();
    if (corpus.empty()) throw DataError("pretrain: empty corpus");
    const ModelConfig& cfg = model.config;

    std::vector<Tensor<Real>> patches;
    patches.reserve(corpus.size());
    for (const auto& img : corpus) patches.push_back(patchify(img, cfg.patch_size));

    AdamW<Real> opt(static_cast<Real>(plan.weight_decay));
    for (const auto& name : model.param_names()) opt.add_param(name, model.param(name));

    const int n = static_cast<int>(corpus.size());
    const long steps_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
    const long total_steps = steps_per_epoch * plan.epochs;
    Rng rng(plan.seed);

    PretrainResult res;
    std::vector<std::vector<Real>> last_good;
    detail::snapshot_params(model, last_good);
    long step = 0;
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        double epoch_loss = 0.0;
        long epoch_images = 0;
        for (const auto& batch : detail::make_batches(n, plan.batch_size, rng)) {
            std::vector<Tensor<Real>> losses;
            losses.reserve(batch.size());
            for (int idx : batch) {
                MaskPlan mask = sample_mask(cfg.num_patches(), cfg.mask_ratio, rng);
                Tensor<Real> enc = encode(model, patches[static_cast<size_t>(idx)], mask);
                Tensor<Real> pred = decode_reconstruct(model, enc, mask);
                losses.push_back(mae_loss(pred, patches[static_cast<size_t>(idx)], mask));
            }
            Tensor<Real> loss = losses[0];
            for (size_t i = 1; i < losses.size(); ++i) loss = add(loss, losses[i]);
            loss = scale(loss, Real(1) / static_cast<Real>(losses.size()));
            if (!std::isfinite(static_cast<double>(loss.item()))) {
                detail::restore_params(model, last_good);
                throw NumericalError("pretraining loss became non-finite at epoch " + std::to_string(epoch));
            }
            opt.zero_grad();
            loss.backward();
            opt.step(static_cast<Real>(lr_at(step, total_steps, plan.base_lr, plan.warmup_fraction)));
            ++step;
            epoch_loss += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
            epoch_images += static_cast<long>(batch.size());
        }
        const double mean_loss = epoch_loss / epoch_images;
        res.epoch_loss.push_back(mean_loss);
        res.log.push_back({epoch, "train", "mae_loss", mean_loss});
        detail::snapshot_params(model, last_good);
    }
    return res;
}

struct LabelledExample {
    Tensor<float> image;  // preprocessed [3,S,S]
    int label;
};

struct FinetuneResult {
    std::vector<LogRow> log;
    std::vector<std::vector<float>> best_params;  // by validation accuracy
    int best_epoch = -1;
    double best_val_accuracy = -1.0;
};

namespace detail {

struct EvalStats {
    double accuracy = 0.0;
    double ce_loss = 0.0;
};

// fixed dataset order, so identical parameters give identical numbers
inline EvalStats eval_split(const VitMae<float>& model, const std::vector<LabelledExample>& data) {
    EvalStats stats;
    if (data.empty()) return stats;
    long correct = 0;
    for (const auto& ex : data) {
        Tensor<float> logits = classify(model, patchify(ex.image, model.config.patch_size));
        int best = 0;
        double z = 0.0, max_logit = logits.data()[0];
        for (int j = 1; j < model.config.num_classes; ++j) {
            if (logits.data()[static_cast<size_t>(j)] > logits.data()[static_cast<size_t>(best)]) best = j;
            max_logit = std::max(max_logit, static_cast<double>(logits.data()[static_cast<size_t>(j)]));
        }
        for (int j = 0; j < model.config.num_classes; ++j)
            z += std::exp(static_cast<double>(logits.data()[static_cast<size_t>(j)]) - max_logit);
        stats.ce_loss += -(static_cast<double>(logits.data()[static_cast<size_t>(ex.label)]) - max_logit -
                           std::log(z));
        if (best == ex.label) ++correct;
    }
    stats.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    stats.ce_loss /= static_cast<double>(data.size());
    return stats;
}

}  // namespace detail

// Supervised fine-tuning: the decoder is discarded up front, a fresh head
// is attached, and everything that remains trains end-to-end.
inline FinetuneResult finetune(VitMae<float>& model, const std::vector<LabelledExample>& train_set,
                               const std::vector<LabelledExample>& val_set, const TrainPlan& plan) {
    plan.validate();
    if (train_set.empty()) throw DataError("finetune: empty training set");
    const ModelConfig& cfg = model.config;
    for (const auto& ex : train_set)
        if (ex.label < 0 || ex.label >= cfg.num_classes)
            throw DataError("finetune: label " + std::to_string(ex.label) + " outside head range [0," +
                            std::to_string(cfg.num_classes) + ")");

    model.drop_params_with_prefix("dec.");
    Rng rng(plan.seed);
    {
        // reinitialize the head; pretrained weights stay put
        Rng head_rng = rng.fork(0x48454144);  // head init stream
        for (const char* base : {"head.fc1", "head.fc2"}) {
            auto& w = model.param(std::string(base) + ".weight");
            for (auto& v : w.data()) v = static_cast<float>(head_rng.trunc_normal(0.02));
            auto& b = model.param(std::string(base) + ".bias");
            std::fill(b.data().begin(), b.data().end(), 0.0f);
        }
    }

    AdamW<float> opt(static_cast<float>(plan.weight_decay));
    for (const auto& name : model.param_names()) opt.add_param(name, model.param(name));

    const int n = static_cast<int>(train_set.size());
    const long steps_per_epoch = (n + plan.batch_size - 1) / plan.batch_size;
    const long total_steps = steps_per_epoch * plan.epochs;

    FinetuneResult res;
    long step = 0;
    for (int epoch = 0; epoch < plan.epochs; ++epoch) {
        Rng aug_epoch_rng = rng.fork(0x100000ull + static_cast<uint64_t>(epoch));
        for (const auto& batch : detail::make_batches(n, plan.batch_size, rng)) {
            std::vector<Tensor<float>> logit_rows;
            std::vector<int> labels;
            for (int idx : batch) {
                const auto& ex = train_set[static_cast<size_t>(idx)];
                Tensor<float> img = ex.image;
                if (plan.augment_train) {
                    Rng r = aug_epoch_rng.fork(static_cast<uint64_t>(idx));
                    img = augment(img, r);
                }
                Tensor<float> logits = classify(model, patchify(img, cfg.patch_size));
                logit_rows.push_back(reshape(logits, {1, cfg.num_classes}));
                labels.push_back(ex.label);
            }
            Tensor<float> loss = cross_entropy_logits(concat_rows(logit_rows), labels);
            if (!std::isfinite(loss.item()))
                throw NumericalError("fine-tuning loss became non-finite at epoch " + std::to_string(epoch));
            opt.zero_grad();
            loss.backward();
            opt.step(static_cast<float>(lr_at(step, total_steps, plan.base_lr, plan.warmup_fraction)));
            ++step;
        }
        // epoch-end metrics come from a fixed-order evaluation pass, so
        // identical parameters log identical values
        const auto train_stats = detail::eval_split(model, train_set);
        res.log.push_back({epoch, "train", "ce_loss", train_stats.ce_loss});
        res.log.push_back({epoch, "train", "accuracy", train_stats.accuracy});
        const double val_acc = detail::eval_split(model, val_set).accuracy;
        res.log.push_back({epoch, "val", "accuracy", val_acc});
        if (val_acc > res.best_val_accuracy) {
            res.best_val_accuracy = val_acc;
            res.best_epoch = epoch;
            res.best_params.clear();
            for (const auto& name : model.param_names()) res.best_params.push_back(model.param(name).data());
        }
    }
    return res;
}

struct GridSearchSpace {
    std::vector<double> learning_rates = {3e-4, 5e-4, 1e-3};
    std::vector<double> weight_decays = {0.01, 0.001, 0.0001};
};

struct GridRunResult {
    double lr;
    double wd;
    bool failed = false;
    std::string error;
    double val_accuracy = -1.0;
    double val_f1 = -1.0;
};

struct GridSearchResult {
    std::vector<GridRunResult> runs;
    double best_lr = 0.0;
    double best_wd = 0.0;
};

// Exhaustive Cartesian sweep with a shared seed; selection by validation
// accuracy, ties broken toward lower lr then higher wd. Failed runs are
// recorded and skipped.
template <class RunFn>
GridSearchResult grid_search(const GridSearchSpace& space, const TrainPlan& plan_template, RunFn run_one) {
    if (space.learning_rates.empty() || space.weight_decays.empty())
        throw ConfigError("grid search space is empty");
    GridSearchResult res;
    for (double lr : space.learning_rates)
        for (double wd : space.weight_decays) {
            GridRunResult row;
            row.lr = lr;
            row.wd = wd;
            TrainPlan plan = plan_template;
            plan.base_lr = lr;
            plan.weight_decay = wd;
            try {
                auto [acc, f1] = run_one(plan);
                row.val_accuracy = acc;
                row.val_f1 = f1;
            } catch (const std::exception& e) {
                row.failed = true;
                row.error = e.what();
            }
            res.runs.push_back(row);
        }
    const GridRunResult* best = nullptr;
    for (const auto& r : res.runs) {
        if (r.failed) continue;
        if (!best || r.val_accuracy > best->val_accuracy ||
            (r.val_accuracy == best->val_accuracy &&
             (r.lr < best->lr || (r.lr == best->lr && r.wd > best->wd))))
            best = &r;
    }
    if (!best) throw NumericalError("every grid-search run failed");
    res.best_lr = best->lr;
    res.best_wd = best->wd;
    return res;
}

}  // namespace usfmae
