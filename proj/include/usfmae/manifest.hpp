#pragma once

// Corpus manifest (CSV: path,label,patient_id,split) and the
// patient-exclusive stratified splitter.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "usfmae/errors.hpp"
#include "usfmae/rng.hpp"

namespace usfmae {

inline const std::vector<std::string> kDefaultClasses = {"Aorta", "Flows", "Other", "VSign", "XSign"};

struct ManifestRecord {
    std::string path;
    std::string label;
    std::string patient_id;
    std::string split;  // train | val | test | unassigned
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;
    std::vector<std::string> classes;  // declared order; all reports echo it
    std::filesystem::path base_dir;    // relative record paths resolve against this

    int class_index(const std::string& label) const {
        for (size_t i = 0; i < classes.size(); ++i)
            if (classes[i] == label) return static_cast<int>(i);
        throw DataError("label '" + label + "' not in declared class set");
    }

    std::string resolve_path(const ManifestRecord& r) const {
        std::filesystem::path p(r.path);
        if (p.is_absolute()) return p.string();
        return (base_dir / p).string();
    }

    std::vector<const ManifestRecord*> split_records(const std::string& split) const {
        std::vector<const ManifestRecord*> out;
        for (const auto& r : records)
            if (r.split == split) out.push_back(&r);
        return out;
    }
};

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    DatasetManifest m;
    m.base_dir = std::filesystem::path(path).parent_path();
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty manifest: " + path);
    if (line != "path,label,patient_id,split")
        throw DataError("manifest header must be 'path,label,patient_id,split': " + path);
    std::set<std::string> labels;
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        ManifestRecord r;
        if (!std::getline(ls, r.path, ',') || !std::getline(ls, r.label, ',') ||
            !std::getline(ls, r.patient_id, ',') || !std::getline(ls, r.split))
            throw DataError("malformed manifest row " + std::to_string(lineno) + ": " + path);
        if (r.split != "train" && r.split != "val" && r.split != "test" && r.split != "unassigned")
            throw DataError("unknown split '" + r.split + "' at row " + std::to_string(lineno) + ": " + path);
        labels.insert(r.label);
        m.records.push_back(std::move(r));
    }
    m.classes.assign(labels.begin(), labels.end());  // sorted, alphabetical
    return m;
}

inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open manifest for writing: " + path);
    out << "path,label,patient_id,split\n";
    for (const auto& r : m.records)
        out << r.path << "," << r.label << "," << r.patient_id << "," << r.split << "\n";
    if (!out) throw DataError("short write: " + path);
}

// patient exclusivity is enforced per manifest as a whole
inline void check_patient_exclusivity(const DatasetManifest& m) {
    std::map<std::string, std::string> assigned;
    for (const auto& r : m.records) {
        auto [it, fresh] = assigned.emplace(r.patient_id, r.split);
        if (!fresh && it->second != r.split)
            throw DataError("patient '" + r.patient_id + "' appears in splits '" + it->second + "' and '" +
                            r.split + "'");
    }
}

// Greedy stratified assignment: patients in descending image count, each
// placed where the (split, class) count deviation from target drops most.
// Patient exclusivity holds by construction.
inline DatasetManifest split_patients(const DatasetManifest& input,
                                      const std::array<double, 3>& fractions, uint64_t seed) {
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    struct Patient {
        std::string id;
        std::vector<size_t> record_idx;
        std::vector<int> class_counts;
    };
    DatasetManifest out = input;
    std::map<std::string, Patient> by_id;
    for (size_t i = 0; i < out.records.size(); ++i) {
        const auto& r = out.records[i];
        if (r.patient_id.empty()) throw DataError("record without patient_id: " + r.path);
        auto& p = by_id[r.patient_id];
        p.id = r.patient_id;
        p.class_counts.resize(out.classes.size(), 0);
        p.record_idx.push_back(i);
        p.class_counts[static_cast<size_t>(out.class_index(r.label))]++;
    }
    if (by_id.size() < 3)
        throw DataError("need at least 3 patients to form train/val/test, got " + std::to_string(by_id.size()));

    const size_t n_classes = out.classes.size();
    std::vector<double> total_per_class(n_classes, 0.0);
    std::vector<Patient> patients;
    for (auto& [id, p] : by_id) {
        for (size_t c = 0; c < n_classes; ++c) total_per_class[c] += p.class_counts[c];
        patients.push_back(std::move(p));
    }
    Rng rng(seed);
    // shuffle first so equal-size ties break by seed, then stable sort by size
    std::vector<int> order = rng.permutation(static_cast<int>(patients.size()));
    std::vector<Patient> shuffled;
    for (int i : order) shuffled.push_back(std::move(patients[static_cast<size_t>(i)]));
    std::stable_sort(shuffled.begin(), shuffled.end(), [](const Patient& a, const Patient& b) {
        return a.record_idx.size() > b.record_idx.size();
    });

    const char* kSplits[3] = {"train", "val", "test"};
    std::vector<std::vector<double>> assigned(3, std::vector<double>(n_classes, 0.0));
    for (auto& p : shuffled) {
        double best_cost = 0.0;
        int best_split = -1;
        for (int s = 0; s < 3; ++s) {
            double cost = 0.0;
            for (size_t c = 0; c < n_classes; ++c) {
                for (int t = 0; t < 3; ++t) {
                    const double have = assigned[static_cast<size_t>(t)][c] + (t == s ? p.class_counts[c] : 0);
                    cost += std::abs(have - fractions[static_cast<size_t>(t)] * total_per_class[c]);
                }
            }
            if (best_split < 0 || cost < best_cost - 1e-12) {
                best_cost = cost;
                best_split = s;
            }
        }
        for (size_t c = 0; c < n_classes; ++c)
            assigned[static_cast<size_t>(best_split)][c] += p.class_counts[c];
        for (size_t i : p.record_idx) out.records[i].split = kSplits[best_split];
    }
    check_patient_exclusivity(out);
    return out;
}

}  // namespace usfmae
