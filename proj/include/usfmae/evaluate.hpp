#pragma once

// Single deterministic pass over one manifest split: preprocess,
// classify, softmax scores, full metrics report.

#include <cmath>
#include <string>
#include <vector>

#include "usfmae/errors.hpp"
#include "usfmae/image.hpp"
#include "usfmae/manifest.hpp"
#include "usfmae/metrics.hpp"
#include "usfmae/model.hpp"
#include "usfmae/preprocess.hpp"

namespace usfmae {

inline PredictionSet predict_split(const VitMae<float>& model, const DatasetManifest& manifest,
                                   const std::string& split, const PreprocessConfig& cfg) {
    const auto records = manifest.split_records(split);
    if (records.empty()) throw DataError("split '" + split + "' is empty");
    if (static_cast<int>(manifest.classes.size()) != model.config.num_classes)
        throw DataError("manifest declares " + std::to_string(manifest.classes.size()) +
                        " classes but model head has " + std::to_string(model.config.num_classes));
    PredictionSet preds;
    preds.reserve(records.size());
    for (const auto* r : records) {
        const Tensor<float> img = preprocess(load_image(manifest.resolve_path(*r)), cfg);
        const Tensor<float> logits = classify(model, patchify(img, model.config.patch_size));
        Prediction p;
        p.true_label = manifest.class_index(r->label);
        double mx = logits.data()[0];
        for (float v : logits.data()) mx = std::max(mx, static_cast<double>(v));
        double z = 0.0;
        p.scores.resize(logits.numel());
        for (size_t j = 0; j < p.scores.size(); ++j) {
            p.scores[j] = std::exp(static_cast<double>(logits.data()[j]) - mx);
            z += p.scores[j];
        }
        for (auto& s : p.scores) s /= z;
        preds.push_back(std::move(p));
    }
    return preds;
}

inline MetricsReport evaluate(const VitMae<float>& model, const DatasetManifest& manifest,
                              const std::string& split, const PreprocessConfig& cfg) {
    return build_report(predict_split(model, manifest, split, cfg), manifest.classes);
}

}  // namespace usfmae
