// Command-line driver for the full workflow:
//   usfmae split|pretrain|finetune|gridsearch|evaluate [--config FILE] [--key value ...]
// Config is flat key=value text; command-line keys override file keys.
// Exit codes: 0 ok, 2 config error, 3 data error, 4 numerical abort.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "usfmae/checkpoint.hpp"
#include "usfmae/evaluate.hpp"
#include "usfmae/image.hpp"
#include "usfmae/manifest.hpp"
#include "usfmae/metrics.hpp"
#include "usfmae/model.hpp"
#include "usfmae/preprocess.hpp"
#include "usfmae/trainer.hpp"

namespace fs = std::filesystem;
using namespace usfmae;

namespace {

struct KeyValues {
    std::map<std::string, std::string> values;
    mutable std::vector<std::string> errors;

    bool has(const std::string& k) const { return values.count(k) > 0; }

    std::string get(const std::string& k, const std::string& fallback) const {
        auto it = values.find(k);
        return it == values.end() ? fallback : it->second;
    }
    std::string require(const std::string& k) const {
        auto it = values.find(k);
        if (it == values.end()) {
            errors.push_back("missing required key '" + k + "'");
            return "";
        }
        return it->second;
    }
    long get_long(const std::string& k, long fallback) const {
        auto it = values.find(k);
        if (it == values.end()) return fallback;
        try {
            return std::stol(it->second);
        } catch (...) {
            errors.push_back("key '" + k + "' is not an integer: " + it->second);
            return fallback;
        }
    }
    double get_double(const std::string& k, double fallback) const {
        auto it = values.find(k);
        if (it == values.end()) return fallback;
        try {
            return std::stod(it->second);
        } catch (...) {
            errors.push_back("key '" + k + "' is not a number: " + it->second);
            return fallback;
        }
    }
};

void load_config_file(KeyValues& kv, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto h = line.find('#');
        if (h != std::string::npos) line = line.substr(0, h);
        const auto eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + path);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        kv.values.emplace(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));  // first wins: CLI precedes file
    }
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::istringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

ModelConfig model_from(const KeyValues& kv) {
    ModelConfig cfg = ModelConfig::preset(kv.get("model.preset", "tiny"));
    cfg.image_size = static_cast<int>(kv.get_long("model.image_size", cfg.image_size));
    cfg.patch_size = static_cast<int>(kv.get_long("model.patch_size", cfg.patch_size));
    cfg.in_channels = static_cast<int>(kv.get_long("model.in_channels", cfg.in_channels));
    cfg.encoder_dim = static_cast<int>(kv.get_long("model.encoder_dim", cfg.encoder_dim));
    cfg.encoder_depth = static_cast<int>(kv.get_long("model.encoder_depth", cfg.encoder_depth));
    cfg.encoder_heads = static_cast<int>(kv.get_long("model.encoder_heads", cfg.encoder_heads));
    cfg.decoder_dim = static_cast<int>(kv.get_long("model.decoder_dim", cfg.decoder_dim));
    cfg.decoder_depth = static_cast<int>(kv.get_long("model.decoder_depth", cfg.decoder_depth));
    cfg.decoder_heads = static_cast<int>(kv.get_long("model.decoder_heads", cfg.decoder_heads));
    cfg.mlp_ratio = static_cast<int>(kv.get_long("model.mlp_ratio", cfg.mlp_ratio));
    cfg.mask_ratio = static_cast<float>(kv.get_double("model.mask_ratio", cfg.mask_ratio));
    cfg.num_classes = static_cast<int>(kv.get_long("model.num_classes", cfg.num_classes));
    cfg.head_hidden = static_cast<int>(kv.get_long("model.head_hidden", cfg.head_hidden));
    cfg.mean_pool = kv.get("model.mean_pool", "false") == "true";
    return cfg;
}

PreprocessConfig preprocess_from(const KeyValues& kv) {
    PreprocessConfig cfg;
    cfg.crop_top = static_cast<int>(kv.get_long("pre.crop_top", 0));
    cfg.crop_bottom = static_cast<int>(kv.get_long("pre.crop_bottom", 0));
    cfg.crop_left = static_cast<int>(kv.get_long("pre.crop_left", 0));
    cfg.crop_right = static_cast<int>(kv.get_long("pre.crop_right", 0));
    cfg.target_size = static_cast<int>(kv.get_long("pre.target_size", 224));
    return cfg;
}

TrainPlan plan_from(const KeyValues& kv, TrainMode mode, uint64_t seed) {
    TrainPlan plan;
    plan.epochs = static_cast<int>(kv.get_long("train.epochs", 120));
    plan.batch_size = static_cast<int>(kv.get_long("train.batch_size", 64));
    plan.base_lr = kv.get_double("train.base_lr", 5e-4);
    plan.weight_decay = kv.get_double("train.weight_decay", 0.01);
    plan.warmup_fraction = kv.get_double("train.warmup_fraction", 0.1);
    plan.seed = seed;
    plan.mode = mode;
    plan.augment_train = kv.get("train.augment", "true") == "true";
    return plan;
}

// partial outputs carry a temp name and land only on success
void atomic_write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << text;
    }
    fs::rename(tmp, path);
}

// every artifact gets a sidecar with the resolved config and seed
void write_sidecar(const fs::path& out_dir, const std::string& command, const KeyValues& kv) {
    std::ostringstream os;
    os << "command=" << command << "\n";
    for (const auto& [k, v] : kv.values) os << k << "=" << v << "\n";
    atomic_write_text(out_dir / (command + ".cfg"), os.str());
}

nlohmann::ordered_json run_meta(const std::string& command, const KeyValues& kv) {
    nlohmann::ordered_json meta;
    meta["command"] = command;
    for (const auto& [k, v] : kv.values) meta[k] = v;
    return meta;
}

std::string log_csv(const std::vector<LogRow>& rows) {
    std::ostringstream os;
    os << "epoch,split,metric,value\n";
    os.precision(10);
    for (const auto& r : rows) os << r.epoch << "," << r.split << "," << r.metric << "," << r.value << "\n";
    return os.str();
}

std::vector<LabelledExample> load_split(const DatasetManifest& manifest, const std::string& split,
                                        const PreprocessConfig& pre) {
    std::vector<LabelledExample> out;
    for (const auto* r : manifest.split_records(split))
        out.push_back({preprocess(load_image(manifest.resolve_path(*r)), pre), manifest.class_index(r->label)});
    return out;
}


void check_errors(const KeyValues& kv) {
    if (kv.errors.empty()) return;
    std::string msg;
    for (const auto& e : kv.errors) msg += (msg.empty() ? "" : "; ") + e;
    throw ConfigError(msg);
}

int cmd_split(const KeyValues& kv, const fs::path& out_dir, uint64_t seed) {
    const std::string mpath = kv.require("manifest");
    check_errors(kv);
    DatasetManifest manifest = read_manifest(mpath);
    std::array<double, 3> fr = {kv.get_double("split.train", 0.5), kv.get_double("split.val", 0.25),
                                kv.get_double("split.test", 0.25)};
    DatasetManifest assigned = split_patients(manifest, fr, seed);
    // the split manifest lands in out_dir, away from the corpus; pin the
    // image paths so they still resolve
    for (auto& r : assigned.records) r.path = fs::absolute(assigned.resolve_path(r)).string();
    const fs::path tmp = out_dir / "manifest_split.csv.tmp";
    write_manifest(assigned, tmp.string());
    fs::rename(tmp, out_dir / "manifest_split.csv");
    write_sidecar(out_dir, "split", kv);
    std::cout << "split: wrote " << (out_dir / "manifest_split.csv").string() << "\n";
    return 0;
}

int cmd_pretrain(const KeyValues& kv, const fs::path& out_dir, uint64_t seed) {
    const std::string mpath = kv.require("manifest");
    ModelConfig mcfg = model_from(kv);
    PreprocessConfig pre = preprocess_from(kv);
    TrainPlan plan = plan_from(kv, TrainMode::pretrain, seed);
    check_errors(kv);
    DatasetManifest manifest = read_manifest(mpath);
    mcfg.validate();
    plan.validate();
    if (pre.target_size != mcfg.image_size)
        throw ConfigError("pre.target_size must equal model.image_size");

    // pretraining is label-free: train-split images, or the whole corpus
    // when nothing is assigned yet
    std::vector<Tensor<float>> corpus;
    for (const auto& r : manifest.records)
        if (r.split == "train" || r.split == "unassigned")
            corpus.push_back(preprocess(load_image(manifest.resolve_path(r)), pre));
    if (corpus.empty()) throw DataError("no pretraining images in manifest");

    Rng rng(seed);
    VitMae<float> model = init_parameters<float>(mcfg, rng);
    bool aborted = false;
    std::string abort_msg;
    PretrainResult res;
    try {
        res = pretrain(model, corpus, plan);
    } catch (const NumericalError& e) {
        aborted = true;  // model already rolled back to the last good epoch
        abort_msg = e.what();
    }
    const fs::path ckpt_tmp = out_dir / "pretrain.ckpt.tmp";
    save_checkpoint(model, ckpt_tmp.string(), run_meta("pretrain", kv));
    fs::rename(ckpt_tmp, out_dir / "pretrain.ckpt");
    atomic_write_text(out_dir / "pretrain_log.csv", log_csv(res.log));
    write_sidecar(out_dir, "pretrain", kv);
    if (aborted) throw NumericalError(abort_msg + " (last-good checkpoint retained)");
    std::cout << "pretrain: final epoch loss " << res.epoch_loss.back() << "\n";
    return 0;
}

int cmd_finetune(const KeyValues& kv, const fs::path& out_dir, uint64_t seed) {
    const std::string mpath = kv.require("manifest");
    const std::string ckpt = kv.require("checkpoint");
    PreprocessConfig pre = preprocess_from(kv);
    TrainPlan plan = plan_from(kv, TrainMode::finetune, seed);
    check_errors(kv);
    plan.validate();
    DatasetManifest manifest = read_manifest(mpath);

    VitMae<float> model = load_checkpoint(ckpt);
    if (static_cast<int>(manifest.classes.size()) != model.config.num_classes)
        throw ConfigError("manifest has " + std::to_string(manifest.classes.size()) +
                          " classes but checkpoint head expects " + std::to_string(model.config.num_classes));
    if (pre.target_size != model.config.image_size)
        throw ConfigError("pre.target_size must equal the checkpoint image_size");

    auto train_set = load_split(manifest, "train", pre);
    auto val_set = load_split(manifest, "val", pre);
    if (train_set.empty()) throw DataError("train split is empty");

    FinetuneResult res = finetune(model, train_set, val_set, plan);
    {
        const fs::path tmp = out_dir / "finetune_final.ckpt.tmp";
        save_checkpoint(model, tmp.string(), run_meta("finetune", kv));
        fs::rename(tmp, out_dir / "finetune_final.ckpt");
    }
    {
        VitMae<float> best = model;
        size_t i = 0;
        for (const auto& name : best.param_names()) best.param(name).data() = res.best_params[i++];
        const fs::path tmp = out_dir / "finetune_best.ckpt.tmp";
        save_checkpoint(best, tmp.string(), run_meta("finetune", kv));
        fs::rename(tmp, out_dir / "finetune_best.ckpt");
    }
    atomic_write_text(out_dir / "finetune_log.csv", log_csv(res.log));
    write_sidecar(out_dir, "finetune", kv);
    std::cout << "finetune: best val accuracy " << res.best_val_accuracy << " at epoch " << res.best_epoch << "\n";
    return 0;
}

int cmd_gridsearch(const KeyValues& kv, const fs::path& out_dir, uint64_t seed) {
    const std::string mpath = kv.require("manifest");
    const std::string ckpt = kv.require("checkpoint");
    PreprocessConfig pre = preprocess_from(kv);
    TrainPlan plan_template = plan_from(kv, TrainMode::finetune, seed);
    check_errors(kv);
    plan_template.validate();
    DatasetManifest manifest = read_manifest(mpath);

    GridSearchSpace space;
    if (kv.has("grid.lrs")) space.learning_rates = parse_list(kv.get("grid.lrs", ""));
    if (kv.has("grid.wds")) space.weight_decays = parse_list(kv.get("grid.wds", ""));

    auto train_set = load_split(manifest, "train", pre);
    auto val_set = load_split(manifest, "val", pre);
    if (train_set.empty()) throw DataError("train split is empty");
    if (val_set.empty()) throw DataError("val split is empty");

    GridSearchResult res = grid_search(space, plan_template, [&](const TrainPlan& plan) {
        VitMae<float> model = load_checkpoint(ckpt);
        FinetuneResult ft = finetune(model, train_set, val_set, plan);
        // weighted F1 on the best-epoch parameters, reported alongside
        size_t i = 0;
        for (const auto& name : model.param_names()) model.param(name).data() = ft.best_params[i++];
        PredictionSet preds = predict_split(model, manifest, "val", pre);
        const auto wm = weighted_metrics(preds, model.config.num_classes);
        return std::make_pair(ft.best_val_accuracy, wm.f1);
    });

    std::ostringstream table;
    table << "lr,weight_decay,status,val_accuracy,val_f1\n";
    table.precision(10);
    for (const auto& r : res.runs) {
        table << r.lr << "," << r.wd << "," << (r.failed ? "failed" : "ok") << ",";
        if (r.failed)
            table << ",\n";
        else
            table << r.val_accuracy << "," << r.val_f1 << "\n";
    }
    atomic_write_text(out_dir / "gridsearch.csv", table.str());
    std::ostringstream best;
    best << "train.base_lr=" << res.best_lr << "\ntrain.weight_decay=" << res.best_wd << "\n";
    atomic_write_text(out_dir / "gridsearch_best.cfg", best.str());
    write_sidecar(out_dir, "gridsearch", kv);
    std::cout << "gridsearch: best lr " << res.best_lr << " wd " << res.best_wd << "\n";
    return 0;
}

int cmd_evaluate(const KeyValues& kv, const fs::path& out_dir, uint64_t seed) {
    (void)seed;  // evaluation is deterministic; seed recorded in the sidecar only
    const std::string mpath = kv.require("manifest");
    const std::string ckpt = kv.require("checkpoint");
    PreprocessConfig pre = preprocess_from(kv);
    const std::string split = kv.get("eval.split", "test");
    check_errors(kv);
    DatasetManifest manifest = read_manifest(mpath);

    VitMae<float> model = load_checkpoint(ckpt);
    MetricsReport rep = evaluate(model, manifest, split, pre);

    const fs::path tmp_dir = out_dir / ".report_tmp";
    fs::create_directories(tmp_dir);
    write_report_csvs(rep, tmp_dir.string());
    for (const auto& entry : fs::directory_iterator(tmp_dir))
        fs::rename(entry.path(), out_dir / entry.path().filename());
    fs::remove(tmp_dir);
    write_sidecar(out_dir, "evaluate", kv);
    std::cout << "evaluate: accuracy " << rep.accuracy << " on split " << split << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string usage =
        "usage: usfmae <split|pretrain|finetune|gridsearch|evaluate> [--config FILE] [--key value ...]";
    if (argc < 2) {
        std::cerr << "error: config: missing command; " << usage << "\n";
        return 2;
    }
    const std::string command = argv[1];
    try {
        KeyValues kv;
        std::string config_file;
        for (int i = 2; i < argc; ++i) {
            std::string a = argv[i];
            if (a.rfind("--", 0) != 0 || i + 1 >= argc) throw ConfigError("malformed argument '" + a + "'; " + usage);
            const std::string key = a.substr(2);
            const std::string value = argv[++i];
            if (key == "config")
                config_file = value;
            else
                kv.values[key] = value;  // flags win over file
        }
        if (!config_file.empty()) load_config_file(kv, config_file);

        std::vector<std::string> pre_errors;
        if (!kv.has("seed")) pre_errors.push_back("missing required key 'seed' (no wall-clock default)");
        if (!kv.has("out_dir")) pre_errors.push_back("missing required key 'out_dir'");
        if (!pre_errors.empty()) {
            std::string msg;
            for (const auto& e : pre_errors) msg += (msg.empty() ? "" : "; ") + e;
            throw ConfigError(msg);
        }
        const uint64_t seed = std::stoull(kv.values.at("seed"));
        const fs::path out_dir(kv.values.at("out_dir"));
        fs::create_directories(out_dir);

        int rc;
        if (command == "split")
            rc = cmd_split(kv, out_dir, seed);
        else if (command == "pretrain")
            rc = cmd_pretrain(kv, out_dir, seed);
        else if (command == "finetune")
            rc = cmd_finetune(kv, out_dir, seed);
        else if (command == "gridsearch")
            rc = cmd_gridsearch(kv, out_dir, seed);
        else if (command == "evaluate")
            rc = cmd_evaluate(kv, out_dir, seed);
        else
            throw ConfigError("unknown command '" + command + "'; " + usage);
        if (!kv.errors.empty()) {
            std::string msg;
            for (const auto& e : kv.errors) msg += (msg.empty() ? "" : "; ") + e;
            throw ConfigError(msg);
        }
        return rc;
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: data: " << e.what() << "\n";
        return 3;
    }
}
