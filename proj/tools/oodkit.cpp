// Batch command-line front end for the toolkit: data generation, two-stage
// training, weight search, evaluation, post-training detection, calibration,
// and report merging. One subcommand per pipeline stage; stages compose via
// the manifest each run writes next to its outputs.
//
// Conventions shared by every stage:
//   - inputs are fully loaded and validated before the first output byte is
//     written, and every file is written atomically (temp file + rename), so
//     a failed run never leaves partial outputs behind;
//   - every output JSON embeds the effective config hash, the seed, and the
//     tool version; flag overrides are folded into the config snapshot first
//     so the hash always reflects what actually ran;
//   - JSON object keys are emitted in sorted order and doubles in shortest
//     round-trip form, which makes equal results byte-identical.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <string>
#include <vector>

#include "oodkit/detectors.hpp"
#include "oodkit/io.hpp"
#include "oodkit/metrics.hpp"
#include "oodkit/mlp.hpp"
#include "oodkit/serialize.hpp"
#include "oodkit/synth.hpp"
#include "oodkit/train.hpp"
#include "oodkit/version.hpp"

namespace fs = std::filesystem;
using namespace oodkit;

namespace {

// ---- shared plumbing --------------------------------------------------------

struct StageArgs {
    std::string config_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string checkpoint;

    double lambda1 = -1.0;
    double lambda2 = -1.0;
    long long epochs = -1;
    double epsilon = -1.0;
    std::string orders;
};

std::string join(const std::string& dir, const std::string& name) {
    return (fs::path(dir) / name).string();
}

std::string stem_of(const std::string& path) { return fs::path(path).stem().string(); }

std::string utc_timestamp() {
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_text(const std::string& path, const std::string& content) {
    atomic_write_file(path, content);
}

void write_json_file(const std::string& path, const Json& j) {
    atomic_write_file(path, j.dump(2) + "\n");
}

// Load the config file and fold every given flag override into it, so the
// snapshot and its hash describe the run as actually executed.
Config effective_config(const StageArgs& a) {
    Config cfg = a.config_path.empty() ? Config{} : parse_config(read_file(a.config_path));
    if (a.seed_set) cfg["seed"] = std::to_string(a.seed);
    if (!a.checkpoint.empty()) cfg["checkpoint"] = a.checkpoint;
    if (a.lambda1 >= 0.0) cfg["lambda1"] = format_double(a.lambda1);
    if (a.lambda2 >= 0.0) cfg["lambda2"] = format_double(a.lambda2);
    if (a.epochs >= 0) cfg["epochs"] = std::to_string(a.epochs);
    if (a.epsilon >= 0.0) cfg["epsilon"] = format_double(a.epsilon);
    if (!a.orders.empty()) cfg["orders"] = a.orders;
    return cfg;
}

std::uint64_t config_seed(const Config& cfg) { return config_get_u64(cfg, "seed", 0); }

Json config_to_json(const Config& cfg) {
    Json j = Json::object();
    for (const auto& [k, v] : cfg) j[k] = v;
    return j;
}

Json manifest_base(const std::string& stage, const Config& cfg) {
    Json m;
    m["stage"] = stage;
    m["config"] = config_to_json(cfg);
    m["config_hash"] = config_hash(cfg);
    m["seed"] = config_seed(cfg);
    m["tool_version"] = kToolVersion;
    m["timestamp"] = utc_timestamp();
    const auto it = cfg.find("label");
    if (it != cfg.end()) m["label"] = it->second;
    return m;
}

void stamp_provenance(Json& j, const Config& cfg) {
    j["config_hash"] = config_hash(cfg);
    j["seed"] = config_seed(cfg);
    j["tool_version"] = kToolVersion;
}

std::string require_key(const Config& cfg, const std::string& key) {
    const auto it = cfg.find(key);
    if (it == cfg.end() || it->second.empty())
        throw std::runtime_error("config: missing required key '" + key + "'");
    return it->second;
}

Dataset load_dataset(const std::string& path, DatasetRole role,
                     const std::string& family = "") {
    return dataset_from_csv(read_file(path), role, family);
}

std::vector<std::string> split_paths(const std::string& csv_list, char sep = ',') {
    std::vector<std::string> out;
    for (const std::string& cell : split(csv_list, sep)) {
        const std::string t = trim(cell);
        if (!t.empty()) out.push_back(t);
    }
    if (out.empty()) throw std::runtime_error("config: empty path list");
    return out;
}

// Short display tags from file stems; repeated stems get a #k suffix so
// every table row stays distinguishable.
std::vector<std::string> unique_tags(const std::vector<std::string>& paths) {
    std::vector<std::string> tags;
    for (const std::string& p : paths) {
        std::string t = stem_of(p);
        std::size_t repeat = 0;
        for (const std::string& prev : tags)
            if (prev == t || prev.rfind(t + "#", 0) == 0) ++repeat;
        if (repeat > 0) t += "#" + std::to_string(repeat + 1);
        tags.push_back(t);
    }
    return tags;
}

std::vector<std::size_t> parse_arch(const std::string& s) {
    std::vector<std::size_t> dims;
    for (const std::string& cell : split(s, ',')) {
        const double v = parse_double(trim(cell), "arch");
        if (v < 1.0 || v != std::floor(v))
            throw std::runtime_error("arch: layer widths must be positive integers");
        dims.push_back(static_cast<std::size_t>(v));
    }
    if (dims.size() < 2) throw std::runtime_error("arch: need at least input,output");
    return dims;
}

Activation parse_activation(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::runtime_error("activation: expected relu or tanh, got '" + s + "'");
}

std::vector<int> parse_orders(const std::string& s) {
    std::vector<int> out;
    for (const std::string& cell : split(s, ',')) {
        const double v = parse_double(trim(cell), "orders");
        if (v < 1.0 || v != std::floor(v))
            throw std::runtime_error("orders: expected positive integers");
        out.push_back(static_cast<int>(v));
    }
    if (out.empty()) throw std::runtime_error("orders: empty list");
    return out;
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.seed = config_seed(cfg);
    tc.pretrain_epochs =
        static_cast<std::size_t>(config_get_u64(cfg, "pretrain_epochs", 100));
    tc.finetune_epochs =
        static_cast<std::size_t>(config_get_u64(cfg, "finetune_epochs", 30));
    tc.lr_pretrain = config_get_double(cfg, "lr_pretrain", 0.1);
    tc.lr_finetune = config_get_double(cfg, "lr_finetune", 0.001);
    tc.batch_in = static_cast<std::size_t>(config_get_u64(cfg, "batch_in", 128));
    tc.batch_oe = static_cast<std::size_t>(config_get_u64(cfg, "batch_oe", 256));
    tc.momentum = config_get_double(cfg, "momentum", 0.9);
    tc.weight_decay = config_get_double(cfg, "weight_decay", 0.0);
    const std::string loss = config_get(cfg, "oe_loss", "tv_uniform");
    if (loss == "tv_uniform")
        tc.oe_loss = OeLoss::tv_uniform;
    else if (loss == "kl_uniform")
        tc.oe_loss = OeLoss::kl_uniform;
    else
        throw std::runtime_error("oe_loss: expected tv_uniform or kl_uniform");
    tc.lambda1_grid = config_get_doubles(cfg, "lambda1_grid", tc.lambda1_grid);
    tc.lambda2_grid = config_get_doubles(cfg, "lambda2_grid", tc.lambda2_grid);
    tc.validate();
    return tc;
}

MlpModel fresh_model(const Config& cfg) {
    const std::vector<std::size_t> dims = parse_arch(require_key(cfg, "arch"));
    const Activation act = parse_activation(config_get(cfg, "activation", "relu"));
    // model initialization draws from its own stream of the run seed so data
    // generation and batch order stay independent of the architecture
    Rng rng(config_seed(cfg), 55);
    return make_mlp(dims, act, rng);
}

void save_checkpoint(const std::string& path, const MlpModel& m) {
    atomic_write_file(path, serialize_model(m));
}

MlpModel load_checkpoint(const std::string& path) {
    return deserialize_model(read_file(path));
}

// ---- tables and plot data -----------------------------------------------------

std::string detection_row(const std::string& name, const DetectionReport& r,
                          bool tnr_layout) {
    char buf[160];
    if (tnr_layout)
        std::snprintf(buf, sizeof buf, "%-18s %8.4f %8.4f %8.4f %9.4f %9.4f\n",
                      name.c_str(), r.tnr95, r.auroc_in, r.detection_acc, r.aupr_in,
                      r.aupr_out);
    else
        std::snprintf(buf, sizeof buf, "%-18s %8.4f %8.4f %9.4f %9.4f\n", name.c_str(),
                      r.fpr95, r.auroc_in, r.aupr_in, r.aupr_out);
    return buf;
}

Json detection_entry(const std::string& family, std::size_t rows,
                     const DetectionReport& r) {
    Json j = detection_report_to_json(r);
    j["family"] = family;
    j["rows"] = rows;
    return j;
}

// Staircase ROC points over the distinct score thresholds.
std::string roc_csv(const std::vector<ScoredSample>& samples) {
    std::vector<ScoredSample> s(samples);
    std::sort(s.begin(), s.end(),
              [](const ScoredSample& a, const ScoredSample& b) { return a.score > b.score; });
    std::size_t total_in = 0, total_out = 0;
    for (const ScoredSample& x : s)
        (x.origin == Origin::in_dist ? total_in : total_out) += 1;
    std::string out = "fpr,tpr\n0,0\n";
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        (s[i].origin == Origin::in_dist ? tp : fp) += 1;
        if (i + 1 < s.size() && s[i + 1].score == s[i].score) continue;
        out += format_double(static_cast<double>(fp) / static_cast<double>(total_out));
        out += ',';
        out += format_double(static_cast<double>(tp) / static_cast<double>(total_in));
        out += '\n';
    }
    return out;
}

// Binned counts of max-softmax confidence, one column per dataset.
std::string msp_hist_csv(const std::vector<std::string>& names,
                         const std::vector<std::vector<double>>& score_sets,
                         std::size_t bins = 20) {
    std::string out = "bin_lo,bin_hi";
    for (const std::string& n : names) out += "," + n;
    out += '\n';
    std::vector<std::vector<std::size_t>> counts(names.size(),
                                                 std::vector<std::size_t>(bins, 0));
    for (std::size_t k = 0; k < score_sets.size(); ++k)
        for (double v : score_sets[k]) {
            std::size_t b = static_cast<std::size_t>(v * static_cast<double>(bins));
            if (b >= bins) b = bins - 1;
            ++counts[k][b];
        }
    for (std::size_t b = 0; b < bins; ++b) {
        out += format_double(static_cast<double>(b) / static_cast<double>(bins));
        out += ',';
        out += format_double(static_cast<double>(b + 1) / static_cast<double>(bins));
        for (std::size_t k = 0; k < names.size(); ++k)
            out += "," + std::to_string(counts[k][b]);
        out += '\n';
    }
    return out;
}

std::vector<bool> correct_predictions(const MlpModel& model, const Dataset& labeled) {
    const ForwardTrace t = forward(model, labeled.features);
    const std::vector<std::size_t> pred = argmax_rows(t.logits());
    std::vector<bool> out(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        out[i] = pred[i] == static_cast<std::size_t>(labeled.labels[i]);
    return out;
}

// Deterministic 1-in-5 evaluation subsample: outlier sets larger than
// ceil(rows_in / 5) are cut to that size with a seeded permutation so the
// in/out ratio is fixed across families of different sizes.
Matrix subsample_ood(const Matrix& ood, std::size_t rows_in, std::uint64_t seed) {
    const std::size_t target =
        (rows_in + 4) / 5 == 0 ? 1 : (rows_in + 4) / 5;
    if (ood.rows <= target) return ood;
    Rng rng(seed, 21);
    std::vector<std::size_t> idx = rng.permutation(ood.rows);
    idx.resize(target);
    std::sort(idx.begin(), idx.end());
    return gather_rows(ood, idx);
}

// ---- gen-data -----------------------------------------------------------------

void cmd_gen_data(const StageArgs& args) {
    const Config cfg = effective_config(args);
    SynthSpec spec;
    spec.family = family_from_string(require_key(cfg, "family"));
    spec.dim = static_cast<std::size_t>(config_get_u64(cfg, "dim", 8));
    spec.classes = static_cast<std::size_t>(config_get_u64(cfg, "classes", 2));
    spec.count = static_cast<std::size_t>(config_get_u64(cfg, "count", 2000));
    spec.separation = config_get_double(cfg, "separation", 4.0);
    spec.scale = config_get_double(cfg, "scale", 1.0);
    spec.seed = config_seed(cfg);
    const DatasetRole role = role_from_string(require_key(cfg, "role"));

    Dataset base;
    const Dataset* base_ptr = nullptr;
    if (is_derived_family(spec.family)) {
        const std::string base_path = require_key(cfg, "base");
        const std::string text = read_file(base_path);
        // derived families transform existing rows; the base may or may not
        // carry labels, so accept either layout
        const bool labeled = text.rfind("label", 0) == 0;
        base = dataset_from_csv(text, labeled ? DatasetRole::in_train
                                              : DatasetRole::out_test);
        base_ptr = &base;
    }

    const Dataset d = spec.family == Family::gaussian_blobs
                          ? gen_in_distribution(spec, role)
                          : gen_ood(spec, role, base_ptr);

    fs::create_directories(args.out_dir);
    // in-distribution files are named by role (always the blob family);
    // outlier files are named by family so downstream tables stay readable
    const std::string file_name =
        is_in_distribution(role) ? to_string(role) : to_string(spec.family);
    const std::string data_path = join(args.out_dir, file_name + ".csv");
    write_text(data_path, dataset_to_csv(d));

    Json m = manifest_base("gen-data", cfg);
    m["artifacts"] = Json{{"data", data_path}};
    m["rows"] = d.features.rows;
    m["family"] = d.family;
    write_json_file(join(args.out_dir, "manifest.json"), m);
}

// ---- pretrain / finetune --------------------------------------------------------

void cmd_pretrain(const StageArgs& args) {
    Config cfg = effective_config(args);
    if (cfg.count("epochs")) cfg["pretrain_epochs"] = cfg["epochs"];
    const Dataset train = load_dataset(require_key(cfg, "train"), DatasetRole::in_train);
    const TrainConfig tc = train_config_from(cfg);

    MlpModel model = fresh_model(cfg);
    TrainLog log;
    const double a_tr = pretrain(model, train, tc, &log);

    fs::create_directories(args.out_dir);
    const std::string model_path = join(args.out_dir, "model.bin");
    save_checkpoint(model_path, model);

    Json m = manifest_base("pretrain", cfg);
    m["artifacts"] = Json{{"model", model_path}};
    m["a_tr"] = a_tr;
    if (!log.empty()) m["final_loss"] = log.back().total;
    write_json_file(join(args.out_dir, "manifest.json"), m);
}

void cmd_finetune(const StageArgs& args) {
    Config cfg = effective_config(args);
    if (cfg.count("epochs")) cfg["finetune_epochs"] = cfg["epochs"];
    const Dataset train = load_dataset(require_key(cfg, "train"), DatasetRole::in_train);
    const Dataset oe = load_dataset(require_key(cfg, "oe"), DatasetRole::out_oe);
    MlpModel model = load_checkpoint(require_key(cfg, "checkpoint"));
    const TrainConfig tc = train_config_from(cfg);

    OeccConfig oc;
    oc.lambda1 = config_get_double(cfg, "lambda1", 0.0);
    oc.lambda2 = config_get_double(cfg, "lambda2", 0.0);
    oc.k = model.output_dim();
    oc.oe_loss = tc.oe_loss;
    if (cfg.count("a_tr")) {
        oc.a_tr = config_get_double(cfg, "a_tr", 1.0);
    } else if (cfg.count("pretrain_manifest")) {
        const Json pm = parse_json(read_file(cfg.at("pretrain_manifest")),
                                   "pretrain manifest");
        if (!pm.contains("a_tr"))
            throw std::runtime_error("pretrain manifest: missing a_tr");
        oc.a_tr = pm.at("a_tr").get<double>();
    } else {
        throw std::runtime_error("config: need a_tr or pretrain_manifest");
    }
    oc.validate();

    TrainLog log;
    finetune_oecc(model, train, oe, tc, oc, &log);

    fs::create_directories(args.out_dir);
    const std::string model_path = join(args.out_dir, "model.bin");
    save_checkpoint(model_path, model);

    Json m = manifest_base("finetune", cfg);
    m["artifacts"] = Json{{"model", model_path}};
    m["a_tr"] = oc.a_tr;
    m["lambda1"] = oc.lambda1;
    m["lambda2"] = oc.lambda2;
    if (!log.empty()) m["final_loss"] = log.back().total;
    write_json_file(join(args.out_dir, "manifest.json"), m);
}

// ---- tune -----------------------------------------------------------------------

void cmd_tune(const StageArgs& args) {
    Config cfg = effective_config(args);
    if (cfg.count("epochs")) cfg["finetune_epochs"] = cfg["epochs"];
    const Dataset train = load_dataset(require_key(cfg, "train"), DatasetRole::in_train);
    const Dataset in_test = load_dataset(require_key(cfg, "in_test"), DatasetRole::in_test);
    const Dataset oe = load_dataset(require_key(cfg, "oe"), DatasetRole::out_oe);
    const Dataset out_val = load_dataset(require_key(cfg, "val"), DatasetRole::out_val);
    const TrainConfig tc = train_config_from(cfg);

    const std::vector<std::size_t> dims = parse_arch(require_key(cfg, "arch"));
    const Activation act = parse_activation(config_get(cfg, "activation", "relu"));
    const ModelFactory factory = [dims, act](std::uint64_t seed) {
        Rng rng(seed, 55);
        return make_mlp(dims, act, rng);
    };

    const TuneReport report = tune_lambdas(factory, train, in_test, oe, out_val, tc);

    Json cells = Json::array();
    for (const GridCell& c : report.cells) {
        Json cj;
        cj["lambda1"] = c.lambda1;
        cj["lambda2"] = c.lambda2;
        cj["val_fpr95"] = c.val_fpr95;
        cj["val_auroc"] = c.val_auroc;
        cells.push_back(std::move(cj));
    }
    Json out;
    out["a_tr"] = report.a_tr;
    out["best_lambda1"] = report.best_lambda1;
    out["best_lambda2"] = report.best_lambda2;
    out["cells"] = std::move(cells);
    stamp_provenance(out, cfg);

    fs::create_directories(args.out_dir);
    const std::string tune_path = join(args.out_dir, "tune.json");
    write_json_file(tune_path, out);

    Json m = manifest_base("tune", cfg);
    m["artifacts"] = Json{{"tune", tune_path}};
    m["best_lambda1"] = report.best_lambda1;
    m["best_lambda2"] = report.best_lambda2;
    write_json_file(join(args.out_dir, "manifest.json"), m);
}

// ---- eval -----------------------------------------------------------------------

void cmd_eval(const StageArgs& args) {
    const Config cfg = effective_config(args);
    const MlpModel model = load_checkpoint(require_key(cfg, "checkpoint"));
    const Dataset in_test = load_dataset(require_key(cfg, "in_test"), DatasetRole::in_test);
    const std::vector<std::string> ood_paths = split_paths(require_key(cfg, "ood"));
    const std::vector<std::string> ood_tags = unique_tags(ood_paths);
    std::vector<Dataset> ood_sets;
    for (std::size_t k = 0; k < ood_paths.size(); ++k)
        ood_sets.push_back(load_dataset(ood_paths[k], DatasetRole::out_test, ood_tags[k]));

    const std::vector<double> msp_in = msp_scores(model, in_test.features);

    Json families = Json::array();
    std::string table =
        "family                FPR95    AUROC   AUPR-in  AUPR-out\n";
    std::vector<std::string> hist_names = {"in_test"};
    std::vector<std::vector<double>> hist_scores = {msp_in};
    std::vector<std::pair<std::string, std::string>> roc_files;

    for (std::size_t k = 0; k < ood_sets.size(); ++k) {
        const Matrix sub =
            subsample_ood(ood_sets[k].features, in_test.features.rows, config_seed(cfg));
        const std::vector<double> msp_out = msp_scores(model, sub);
        const auto scored = make_scored(msp_in, msp_out);
        const DetectionReport r = evaluate_detection(scored);
        const std::string name = ood_sets[k].family;
        families.push_back(detection_entry(name, sub.rows, r));
        table += detection_row(name, r, /*tnr_layout=*/false);
        hist_names.push_back(name);
        hist_scores.push_back(msp_out);
        roc_files.emplace_back("roc_" + name + ".csv", roc_csv(scored));
    }

    Json out;
    out["families"] = std::move(families);
    out["in_rows"] = in_test.features.rows;
    stamp_provenance(out, cfg);

    fs::create_directories(args.out_dir);
    const std::string eval_path = join(args.out_dir, "eval.json");
    const std::string table_path = join(args.out_dir, "table.txt");
    const std::string hist_path = join(args.out_dir, "msp_hist.csv");
    write_json_file(eval_path, out);
    write_text(table_path, table);
    write_text(hist_path, msp_hist_csv(hist_names, hist_scores));
    Json artifacts{{"eval", eval_path}, {"table", table_path}, {"msp_hist", hist_path}};
    for (const auto& [name, content] : roc_files) {
        const std::string p = join(args.out_dir, name);
        write_text(p, content);
        artifacts[name] = p;
    }

    Json m = manifest_base("eval", cfg);
    m["artifacts"] = std::move(artifacts);
    write_json_file(join(args.out_dir, "manifest.json"), m);
    std::fputs(table.c_str(), stdout);
}

// ---- detect ---------------------------------------------------------------------

struct LayerSet {
    std::vector<Matrix> layers;
    std::vector<std::size_t> predictions;  // argmax of the final layer
};

LayerSet load_layer_csvs(const std::string& list) {
    LayerSet ls;
    for (const std::string& p : split_paths(list))
        ls.layers.push_back(matrix_from_csv(read_file(p)));
    const std::size_t n = ls.layers.front().rows;
    for (const Matrix& m : ls.layers)
        if (m.rows != n) throw std::runtime_error("feature csvs: ragged row counts");
    ls.predictions = argmax_rows(ls.layers.back());
    return ls;
}

LayerSet trace_layers(const MlpModel& model, const Matrix& batch) {
    LayerSet ls;
    ForwardTrace t = forward(model, batch);
    ls.predictions = argmax_rows(t.logits());
    ls.layers = std::move(t.post);
    return ls;
}

LayerSet gather_layer_rows(const LayerSet& ls, const std::vector<std::size_t>& idx) {
    LayerSet out;
    for (const Matrix& m : ls.layers) out.layers.push_back(gather_rows(m, idx));
    out.predictions.reserve(idx.size());
    for (std::size_t i : idx) out.predictions.push_back(ls.predictions[i]);
    return out;
}

void cmd_detect(const StageArgs& args) {
    const Config cfg = effective_config(args);
    const std::string detector = require_key(cfg, "detector");
    if (detector != "md" && detector != "gram")
        throw std::runtime_error("detector: expected md or gram");
    const double epsilon = config_get_double(cfg, "epsilon", 0.0);
    const std::vector<int> orders = parse_orders(config_get(cfg, "orders", "1,2,3,4"));
    const double val_fraction = config_get_double(cfg, "val_fraction", 0.1);
    const std::uint64_t seed = config_seed(cfg);

    const bool feature_mode = cfg.count("train_features") > 0;

    // ---- assemble layer features for train / in-test / each outlier family ----
    MlpModel model;
    LayerSet train_ls, in_ls;
    std::vector<int> train_labels;
    std::size_t classes = 0;
    std::vector<std::pair<std::string, LayerSet>> ood_ls;
    Matrix in_rows;                 // raw inputs, checkpoint mode only
    std::vector<Matrix> ood_rows;   // raw inputs per family, checkpoint mode only

    if (feature_mode) {
        // precomputed per-layer feature CSVs; the final CSV must be the logit
        // layer so predictions can be recovered by row-wise argmax
        if (epsilon != 0.0)
            throw std::runtime_error(
                "detect: input preprocessing needs a checkpoint, not feature csvs");
        if (cfg.count("val_ood"))
            throw std::runtime_error(
                "detect: the score ensemble needs a checkpoint, not feature csvs");
        train_ls = load_layer_csvs(require_key(cfg, "train_features"));
        in_ls = load_layer_csvs(require_key(cfg, "in_features"));
        const std::vector<std::string> groups =
            split_paths(require_key(cfg, "ood_features"), ';');
        std::vector<std::string> firsts;
        for (const std::string& g : groups) firsts.push_back(split_paths(g).front());
        const std::vector<std::string> tags = unique_tags(firsts);
        for (std::size_t k = 0; k < groups.size(); ++k)
            ood_ls.emplace_back(tags[k], load_layer_csvs(groups[k]));
        classes = train_ls.layers.back().cols;
        if (detector == "md") {
            const Dataset train =
                load_dataset(require_key(cfg, "train"), DatasetRole::in_train);
            if (train.labels.size() != train_ls.layers.front().rows)
                throw std::runtime_error("detect: train csv rows != feature csv rows");
            train_labels = train.labels;
        }
    } else {
        model = load_checkpoint(require_key(cfg, "checkpoint"));
        const Dataset train =
            load_dataset(require_key(cfg, "train"), DatasetRole::in_train);
        const Dataset in_test =
            load_dataset(require_key(cfg, "in_test"), DatasetRole::in_test);
        train_labels = train.labels;
        classes = model.output_dim();
        train_ls = trace_layers(model, train.features);
        in_ls = trace_layers(model, in_test.features);
        in_rows = in_test.features;
        const std::vector<std::string> ood_paths = split_paths(require_key(cfg, "ood"));
        const std::vector<std::string> ood_tags = unique_tags(ood_paths);
        for (std::size_t k = 0; k < ood_paths.size(); ++k) {
            const Dataset d =
                load_dataset(ood_paths[k], DatasetRole::out_test, ood_tags[k]);
            ood_ls.emplace_back(d.family, trace_layers(model, d.features));
            ood_rows.push_back(d.features);
        }
    }

    // hold out a slice of the in-distribution test rows for detector
    // normalization / ensemble fitting; score the rest
    const std::size_t n_in = in_ls.layers.front().rows;
    const auto val_idx = validation_partition(n_in, val_fraction, derive_seed(seed, 12));
    const auto test_idx = complement_indices(n_in, val_idx);
    const LayerSet val_in = gather_layer_rows(in_ls, val_idx);
    const LayerSet test_in = gather_layer_rows(in_ls, test_idx);

    Json state;
    std::vector<double> scores_in;
    std::vector<std::vector<double>> scores_out(ood_ls.size());

    if (detector == "md") {
        if (train_labels.empty())
            throw std::runtime_error("detect: gaussian scoring needs labeled train rows");
        const GaussianStats stats =
            fit_mahalanobis_features(train_ls.layers, train_labels, classes);
        const bool use_ensemble = cfg.count("val_ood") > 0;
        if (use_ensemble) {
            // the ensemble and the preprocessing both recompute features from
            // raw rows, so they only run in checkpoint mode
            const Dataset val_ood =
                load_dataset(cfg.at("val_ood"), DatasetRole::out_val);
            const Matrix val_in_rows = gather_rows(in_rows, val_idx);
            const Matrix test_in_rows = gather_rows(in_rows, test_idx);
            const EnsembleWeights ew =
                fit_ensemble(model, stats, val_in_rows, val_ood.features, epsilon);
            scores_in = ensemble_scores(
                ew, mahalanobis_scores(
                        stats, feature_layers(model, input_preprocess(
                                                         model, stats, test_in_rows,
                                                         epsilon))));
            for (std::size_t k = 0; k < ood_ls.size(); ++k)
                scores_out[k] = ensemble_scores(
                    ew, mahalanobis_scores(
                            stats, feature_layers(model, input_preprocess(
                                                             model, stats, ood_rows[k],
                                                             epsilon))));
            state = gaussian_stats_to_json(stats);
            state["ensemble"] = ensemble_to_json(ew);
        } else if (!feature_mode && epsilon > 0.0) {
            const Matrix test_in_rows = gather_rows(in_rows, test_idx);
            scores_in = mahalanobis_total_scores(
                stats, feature_layers(model, input_preprocess(model, stats, test_in_rows,
                                                              epsilon)));
            for (std::size_t k = 0; k < ood_ls.size(); ++k)
                scores_out[k] = mahalanobis_total_scores(
                    stats, feature_layers(model, input_preprocess(model, stats,
                                                                  ood_rows[k], epsilon)));
            state = gaussian_stats_to_json(stats);
        } else {
            scores_in = mahalanobis_total_scores(stats, test_in.layers);
            for (std::size_t k = 0; k < ood_ls.size(); ++k)
                scores_out[k] =
                    mahalanobis_total_scores(stats, ood_ls[k].second.layers);
            state = gaussian_stats_to_json(stats);
        }
    } else {
        GramSignature sig =
            fit_gram_features(train_ls.layers, train_ls.predictions, classes, orders);
        compute_normalizers_features(sig, val_in.layers, val_in.predictions);
        scores_in = gram_scores_features(sig, test_in.layers, test_in.predictions);
        for (std::size_t k = 0; k < ood_ls.size(); ++k)
            scores_out[k] = gram_scores_features(sig, ood_ls[k].second.layers,
                                                 ood_ls[k].second.predictions);
        state = gram_to_json(sig);
    }

    Json families = Json::array();
    std::string table =
        "family                TNR95    AUROC     DAcc   AUPR-in  AUPR-out\n";
    for (std::size_t k = 0; k < ood_ls.size(); ++k) {
        const auto scored = make_scored(scores_in, scores_out[k]);
        const DetectionReport r = evaluate_detection(scored);
        families.push_back(
            detection_entry(ood_ls[k].first, scores_out[k].size(), r));
        table += detection_row(ood_ls[k].first, r, /*tnr_layout=*/true);
    }

    Json out;
    out["detector"] = detector;
    out["epsilon"] = epsilon;
    if (detector == "gram") out["orders"] = orders;
    out["families"] = std::move(families);
    out["in_rows"] = test_idx.size();
    stamp_provenance(out, cfg);
    stamp_provenance(state, cfg);

    fs::create_directories(args.out_dir);
    const std::string detect_path = join(args.out_dir, "detect.json");
    const std::string state_path = join(args.out_dir, "detector_state.json");
    const std::string table_path = join(args.out_dir, "table.txt");
    write_json_file(detect_path, out);
    write_json_file(state_path, state);
    write_text(table_path, table);

    Json m = manifest_base("detect", cfg);
    m["artifacts"] = Json{{"detect", detect_path},
                          {"detector_state", state_path},
                          {"table", table_path}};
    write_json_file(join(args.out_dir, "manifest.json"), m);
    std::fputs(table.c_str(), stdout);
}

// ---- calibrate ------------------------------------------------------------------

void cmd_calibrate(const StageArgs& args) {
    const Config cfg = effective_config(args);
    const MlpModel model = load_checkpoint(require_key(cfg, "checkpoint"));
    const Dataset in_test = load_dataset(require_key(cfg, "in_test"), DatasetRole::in_test);
    const std::size_t bins = static_cast<std::size_t>(config_get_u64(cfg, "bins", 15));

    const std::vector<double> conf = msp_scores(model, in_test.features);
    const std::vector<bool> correct = correct_predictions(model, in_test);
    const CalibrationReport rep = calibration_errors(conf, correct, bins);

    double acc = 0.0;
    for (bool c : correct) acc += c ? 1.0 : 0.0;
    acc /= static_cast<double>(correct.size());

    Json out = calibration_report_to_json(rep);
    out["accuracy"] = acc;
    out["rows"] = in_test.features.rows;
    stamp_provenance(out, cfg);

    std::string rel = "bin,count,confidence,accuracy\n";
    for (std::size_t b = 0; b < rep.bins.size(); ++b) {
        rel += std::to_string(b) + "," + std::to_string(rep.bins[b].count) + "," +
               format_double(rep.bins[b].mean_confidence) + "," +
               format_double(rep.bins[b].accuracy) + "\n";
    }

    fs::create_directories(args.out_dir);
    const std::string cal_path = join(args.out_dir, "calibrate.json");
    const std::string rel_path = join(args.out_dir, "reliability.csv");
    write_json_file(cal_path, out);
    write_text(rel_path, rel);

    Json m = manifest_base("calibrate", cfg);
    m["artifacts"] = Json{{"calibrate", cal_path}, {"reliability", rel_path}};
    m["ece"] = rep.ece;
    m["mce"] = rep.mce;
    write_json_file(join(args.out_dir, "manifest.json"), m);
}

// ---- report ---------------------------------------------------------------------

double mean_of(const Json& families, const char* key) {
    double s = 0.0;
    for (const Json& f : families) s += f.at(key).get<double>();
    return families.empty() ? 0.0 : s / static_cast<double>(families.size());
}

void cmd_report(const StageArgs& args, const std::vector<std::string>& manifest_paths) {
    if (manifest_paths.empty())
        throw std::runtime_error("report: need at least one manifest path");

    // the report's own config is the list of its inputs, so its hash changes
    // exactly when the merged set does
    Config cfg;
    for (std::size_t i = 0; i < manifest_paths.size(); ++i)
        cfg["manifest" + std::to_string(i)] = manifest_paths[i];
    if (args.seed_set) cfg["seed"] = std::to_string(args.seed);

    Json rows = Json::array();
    std::string table =
        "label                 stage       FPR95    TNR95    AUROC      ECE\n";
    for (const std::string& mp : manifest_paths) {
        const Json man = parse_json(read_file(mp), "manifest");
        if (!man.is_object() || !man.contains("stage") || !man.contains("artifacts"))
            throw std::runtime_error("manifest: missing stage or artifacts: " + mp);
        Json row;
        row["source"] = mp;
        row["stage"] = man.at("stage");
        row["config_hash"] = man.value("config_hash", "");
        row["seed"] = man.value("seed", 0);
        const std::string label =
            man.contains("label") ? man.at("label").get<std::string>()
                                  : fs::path(mp).parent_path().filename().string();
        row["label"] = label;

        double fpr = -1.0, tnr = -1.0, roc = -1.0, ece = -1.0;
        const Json& artifacts = man.at("artifacts");
        for (const auto& [name, path] : artifacts.items()) {
            if (name == "eval" || name == "detect" || name == "calibrate" ||
                name == "tune") {
                const Json metrics =
                    parse_json(read_file(path.get<std::string>()), name + " metrics");
                row[name] = metrics;
                if (name == "eval") {
                    fpr = mean_of(metrics.at("families"), "fpr95");
                    roc = mean_of(metrics.at("families"), "auroc");
                } else if (name == "detect") {
                    tnr = mean_of(metrics.at("families"), "tnr95");
                    roc = mean_of(metrics.at("families"), "auroc");
                } else if (name == "calibrate") {
                    ece = metrics.at("ece").get<double>();
                }
            }
        }
        rows.push_back(std::move(row));

        auto cell = [](double v) {
            if (v < 0.0) return std::string("       -");
            char buf[16];
            std::snprintf(buf, sizeof buf, "%8.4f", v);
            return std::string(buf);
        };
        char line[200];
        std::snprintf(line, sizeof line, "%-21s %-10s %s %s %s %s\n", label.c_str(),
                      man.at("stage").get<std::string>().c_str(), cell(fpr).c_str(),
                      cell(tnr).c_str(), cell(roc).c_str(), cell(ece).c_str());
        table += line;
    }

    Json out;
    out["rows"] = std::move(rows);
    stamp_provenance(out, cfg);

    fs::create_directories(args.out_dir);
    const std::string report_path = join(args.out_dir, "report.json");
    const std::string table_path = join(args.out_dir, "report_table.txt");
    write_json_file(report_path, out);
    write_text(table_path, table);

    Json m = manifest_base("report", cfg);
    m["artifacts"] = Json{{"report", report_path}, {"table", table_path}};
    write_json_file(join(args.out_dir, "manifest.json"), m);
    std::fputs(table.c_str(), stdout);
}

void add_common(CLI::App* sub, StageArgs& a, bool config_required = true) {
    auto* c = sub->add_option("--config", a.config_path, "flat key=value config file");
    if (config_required) c->required();
    sub->add_option("--out", a.out_dir, "output directory (created if absent)");
    sub->add_option("--seed", a.seed, "seed override")->each([&a](const std::string&) {
        a.seed_set = true;
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"out-of-distribution detection toolkit"};
    app.require_subcommand(1);
    StageArgs a;
    std::vector<std::string> manifests;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset CSV");
    add_common(gen, a);

    auto* pre = app.add_subcommand("pretrain", "cross-entropy stage; records a_tr");
    add_common(pre, a);
    pre->add_option("--epochs", a.epochs, "override pretrain epoch count");

    auto* fin = app.add_subcommand("finetune", "confidence-calibrated fine-tuning stage");
    add_common(fin, a);
    fin->add_option("--checkpoint", a.checkpoint, "starting checkpoint path");
    fin->add_option("--lambda1", a.lambda1, "confidence-control weight");
    fin->add_option("--lambda2", a.lambda2, "uniformity weight");
    fin->add_option("--epochs", a.epochs, "override fine-tune epoch count");

    auto* tun = app.add_subcommand("tune", "grid search over the two loss weights");
    add_common(tun, a);
    tun->add_option("--epochs", a.epochs, "override fine-tune epoch count");

    auto* ev = app.add_subcommand("eval", "max-softmax detection metrics and plot data");
    add_common(ev, a);
    ev->add_option("--checkpoint", a.checkpoint, "model checkpoint path");

    auto* det = app.add_subcommand("detect", "post-training detector metrics");
    add_common(det, a);
    det->add_option("--checkpoint", a.checkpoint, "model checkpoint path");
    det->add_option("--epsilon", a.epsilon, "input preprocessing step size");
    det->add_option("--orders", a.orders, "comma-separated pairwise orders");

    auto* cal = app.add_subcommand("calibrate", "confidence calibration metrics");
    add_common(cal, a);
    cal->add_option("--checkpoint", a.checkpoint, "model checkpoint path");

    auto* rep = app.add_subcommand("report", "merge run manifests into one table");
    add_common(rep, a, /*config_required=*/false);
    rep->add_option("manifests", manifests, "manifest.json paths to merge");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) cmd_gen_data(a);
        if (pre->parsed()) cmd_pretrain(a);
        if (fin->parsed()) cmd_finetune(a);
        if (tun->parsed()) cmd_tune(a);
        if (ev->parsed()) cmd_eval(a);
        if (det->parsed()) cmd_detect(a);
        if (cal->parsed()) cmd_calibrate(a);
        if (rep->parsed()) cmd_report(a, manifests);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
