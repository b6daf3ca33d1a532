// End-to-end tests for the batch command-line tool. Each case drives the
// real binary (path injected at compile time) inside a scratch directory and
// inspects the files it leaves behind.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "oodkit/io.hpp"
#include "oodkit/mlp.hpp"
#include "oodkit/serialize.hpp"

namespace fs = std::filesystem;
using namespace oodkit;

namespace {

// Runs the tool with the given argument string; returns its exit status.
int run_cli(const fs::path& cwd, const std::string& args) {
    const std::string cmd = "cd \"" + cwd.string() + "\" && \"" OODKIT_CLI_PATH
                            "\" " + args + " >cli_stdout.txt 2>cli_stderr.txt";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Fresh scratch directory per test case.
fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("oodkit_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void put(const fs::path& p, const std::string& content) {
    atomic_write_file(p.string(), content);
}

std::string slurp(const fs::path& p) { return read_file(p.string()); }

Json slurp_json(const fs::path& p) { return parse_json(slurp(p), p.string()); }

// Small config for a fast but real training pipeline on blob data.
void write_pipeline_configs(const fs::path& dir, std::uint64_t seed) {
    const std::string s = std::to_string(seed);
    put(dir / "g_train.cfg",
        "family=gaussian_blobs\nrole=in_train\ndim=4\nclasses=2\ncount=240\n"
        "separation=4.0\nseed=" + s + "\n");
    put(dir / "g_test.cfg",
        "family=gaussian_blobs\nrole=in_test\ndim=4\nclasses=2\ncount=160\n"
        "separation=4.0\nseed=" + std::to_string(seed + 1) + "\n");
    put(dir / "g_oe.cfg",
        "family=uniform_noise\nrole=out_oe\ndim=4\ncount=400\nscale=5.0\nseed=" +
            std::to_string(seed + 2) + "\n");
    put(dir / "g_ood.cfg",
        "family=gaussian_noise\nrole=out_test\ndim=4\ncount=120\nscale=3.0\nseed=" +
            std::to_string(seed + 3) + "\n");
    put(dir / "pre.cfg",
        "train=train/in_train.csv\narch=4,8,2\nactivation=relu\npretrain_epochs=6\n"
        "lr_pretrain=0.05\nseed=" + s + "\n");
    put(dir / "fin.cfg",
        "train=train/in_train.csv\noe=oe/uniform_noise.csv\ncheckpoint=pre/model.bin\n"
        "pretrain_manifest=pre/manifest.json\nlambda1=0.06\nlambda2=0.12\n"
        "finetune_epochs=8\nlr_finetune=0.05\nseed=" + s + "\n");
    put(dir / "ev.cfg",
        "checkpoint=fin/model.bin\nin_test=test/in_test.csv\n"
        "ood=ood/gaussian_noise.csv\nseed=" + s + "\n");
    put(dir / "det.cfg",
        "detector=md\ncheckpoint=fin/model.bin\ntrain=train/in_train.csv\n"
        "in_test=test/in_test.csv\nood=ood/gaussian_noise.csv\nseed=" + s + "\n");
    put(dir / "cal.cfg",
        "checkpoint=fin/model.bin\nin_test=test/in_test.csv\nbins=10\nseed=" + s +
            "\n");
}

void run_pipeline(const fs::path& dir, const std::string& suffix) {
    REQUIRE(run_cli(dir, "gen-data --config g_train.cfg --out train") == 0);
    REQUIRE(run_cli(dir, "gen-data --config g_test.cfg --out test") == 0);
    REQUIRE(run_cli(dir, "gen-data --config g_oe.cfg --out oe") == 0);
    REQUIRE(run_cli(dir, "gen-data --config g_ood.cfg --out ood") == 0);
    REQUIRE(run_cli(dir, "pretrain --config pre.cfg --out pre") == 0);
    REQUIRE(run_cli(dir, "finetune --config fin.cfg --out fin") == 0);
    REQUIRE(run_cli(dir, "eval --config ev.cfg --out eval" + suffix) == 0);
    REQUIRE(run_cli(dir, "detect --config det.cfg --out det" + suffix) == 0);
    REQUIRE(run_cli(dir, "calibrate --config cal.cfg --out cal" + suffix) == 0);
}

}  // namespace

TEST_CASE("eval reports zero FPR95 and unit AUROC under perfect separation") {
    const fs::path dir = scratch("perfect");

    // one-input two-logit model: logits = (10x, -10x), so max-softmax grows
    // monotonically in |x|; in-distribution rows at |x|≈3 strictly dominate
    // outliers at |x|≤0.1
    MlpModel m;
    m.layer_dims = {1, 2};
    m.activation = Activation::relu;
    Matrix w(1, 2);
    w(0, 0) = 10.0;
    w(0, 1) = -10.0;
    m.weights = {w};
    m.biases = {{0.0, 0.0}};
    put(dir / "model.bin", serialize_model(m));

    std::string in_csv = "label,x0\n";
    for (int i = 0; i < 20; ++i) {
        const double x = 3.0 + 0.01 * i;
        in_csv += "0," + format_double(x) + "\n";
        in_csv += "1," + format_double(-x) + "\n";
    }
    put(dir / "in_test.csv", in_csv);

    std::string ood_csv = "x0\n";
    for (int i = 0; i < 25; ++i)
        ood_csv += format_double(-0.1 + 0.008 * i) + "\n";
    put(dir / "ood.csv", ood_csv);

    put(dir / "ev.cfg", "checkpoint=model.bin\nin_test=in_test.csv\nood=ood.csv\nseed=3\n");
    REQUIRE(run_cli(dir, "eval --config ev.cfg --out out") == 0);

    const Json ev = slurp_json(dir / "out" / "eval.json");
    REQUIRE(ev.at("families").size() == 1);
    const Json& fam = ev.at("families").at(0);
    REQUIRE(fam.at("fpr95").get<double>() == 0.0);
    REQUIRE(fam.at("auroc").get<double>() == 1.0);
    REQUIRE(fam.at("aupr_in").get<double>() == 1.0);
    // provenance stamps are mandatory on every metrics file
    REQUIRE(ev.at("seed").get<std::uint64_t>() == 3);
    REQUIRE(ev.at("config_hash").get<std::string>().size() == 16);
    REQUIRE(ev.at("tool_version").get<std::string>() == "0.1.0");

    // plot data exists: ROC staircase reaches (1,1) and the histogram has rows
    const std::string roc = slurp(dir / "out" / "roc_ood.csv");
    REQUIRE(roc.rfind("fpr,tpr\n0,0\n", 0) == 0);
    REQUIRE(roc.find("\n1,1\n") != std::string::npos);
    REQUIRE(slurp(dir / "out" / "msp_hist.csv").find("bin_lo,bin_hi,in_test,ood") == 0);
}

TEST_CASE("a fixed-seed pipeline rerun produces byte-identical outputs") {
    const fs::path dir = scratch("repro");
    write_pipeline_configs(dir, 42);
    run_pipeline(dir, "1");

    // second run in the same tree, fresh output dirs for the metric stages
    REQUIRE(run_cli(dir, "eval --config ev.cfg --out eval2") == 0);
    REQUIRE(run_cli(dir, "detect --config det.cfg --out det2") == 0);
    REQUIRE(run_cli(dir, "calibrate --config cal.cfg --out cal2") == 0);

    CHECK(slurp(dir / "eval1" / "eval.json") == slurp(dir / "eval2" / "eval.json"));
    CHECK(slurp(dir / "eval1" / "msp_hist.csv") == slurp(dir / "eval2" / "msp_hist.csv"));
    CHECK(slurp(dir / "det1" / "detect.json") == slurp(dir / "det2" / "detect.json"));
    CHECK(slurp(dir / "det1" / "detector_state.json") ==
          slurp(dir / "det2" / "detector_state.json"));
    CHECK(slurp(dir / "cal1" / "calibrate.json") == slurp(dir / "cal2" / "calibrate.json"));

    // and a fully repeated training run reproduces the checkpoint bit-exactly
    REQUIRE(run_cli(dir, "pretrain --config pre.cfg --out pre_b") == 0);
    REQUIRE(run_cli(dir, "finetune --config fin.cfg --out fin_b "
                         "--checkpoint pre_b/model.bin") == 0);
    CHECK(slurp(dir / "pre" / "model.bin") == slurp(dir / "pre_b" / "model.bin"));
    CHECK(slurp(dir / "fin" / "model.bin") == slurp(dir / "fin_b" / "model.bin"));
}

TEST_CASE("changing the seed changes the config hash in outputs") {
    const fs::path dir = scratch("seedhash");
    write_pipeline_configs(dir, 42);
    run_pipeline(dir, "1");
    REQUIRE(run_cli(dir, "eval --config ev.cfg --out eval_s7 --seed 7") == 0);
    const Json a = slurp_json(dir / "eval1" / "eval.json");
    const Json b = slurp_json(dir / "eval_s7" / "eval.json");
    CHECK(a.at("seed").get<std::uint64_t>() == 42);
    CHECK(b.at("seed").get<std::uint64_t>() == 7);
    CHECK(a.at("config_hash") != b.at("config_hash"));
}

TEST_CASE("corrupt or missing inputs exit nonzero and write nothing") {
    const fs::path dir = scratch("errors");

    SECTION("missing config file") {
        REQUIRE(run_cli(dir, "eval --config nope.cfg --out out") != 0);
        CHECK_FALSE(fs::exists(dir / "out"));
    }
    SECTION("config missing a required key") {
        put(dir / "bad.cfg", "in_test=whatever.csv\n");
        REQUIRE(run_cli(dir, "eval --config bad.cfg --out out") != 0);
        CHECK_FALSE(fs::exists(dir / "out"));
        const std::string err = slurp(dir / "cli_stderr.txt");
        CHECK(err.find("checkpoint") != std::string::npos);
    }
    SECTION("corrupt checkpoint") {
        put(dir / "model.bin", "this is not a checkpoint");
        put(dir / "in.csv", "label,x0\n0,1.0\n1,-1.0\n");
        put(dir / "ood.csv", "x0\n0.0\n");
        put(dir / "ev.cfg", "checkpoint=model.bin\nin_test=in.csv\nood=ood.csv\n");
        REQUIRE(run_cli(dir, "eval --config ev.cfg --out out") != 0);
        CHECK_FALSE(fs::exists(dir / "out"));
    }
    SECTION("outlier csv with a label column is rejected before any output") {
        MlpModel m;
        m.layer_dims = {1, 2};
        m.activation = Activation::relu;
        Matrix w(1, 2);
        w(0, 0) = 1.0;
        w(0, 1) = -1.0;
        m.weights = {w};
        m.biases = {{0.0, 0.0}};
        put(dir / "model.bin", serialize_model(m));
        put(dir / "in.csv", "label,x0\n0,1.0\n1,-1.0\n");
        put(dir / "bad_ood.csv", "label,x0\n0,0.0\n");
        put(dir / "ev.cfg",
            "checkpoint=model.bin\nin_test=in.csv\nood=bad_ood.csv\n");
        REQUIRE(run_cli(dir, "eval --config ev.cfg --out out") != 0);
        CHECK_FALSE(fs::exists(dir / "out"));
    }
    SECTION("unknown subcommand") {
        REQUIRE(run_cli(dir, "frobnicate") != 0);
    }
    SECTION("gen-data with unknown family") {
        put(dir / "g.cfg", "family=nonsense\nrole=out_test\n");
        REQUIRE(run_cli(dir, "gen-data --config g.cfg --out out") != 0);
        CHECK_FALSE(fs::exists(dir / "out"));
    }
}

TEST_CASE("report merges manifests and reproduces their metrics unchanged") {
    const fs::path dir = scratch("report");
    write_pipeline_configs(dir, 42);
    run_pipeline(dir, "1");

    REQUIRE(run_cli(dir, "report --out rep eval1/manifest.json det1/manifest.json "
                         "cal1/manifest.json") == 0);

    const Json rep = slurp_json(dir / "rep" / "report.json");
    REQUIRE(rep.at("rows").size() == 3);

    const Json ev = slurp_json(dir / "eval1" / "eval.json");
    const Json det = slurp_json(dir / "det1" / "detect.json");
    const Json cal = slurp_json(dir / "cal1" / "calibrate.json");

    bool saw_eval = false, saw_det = false, saw_cal = false;
    for (const Json& row : rep.at("rows")) {
        const std::string stage = row.at("stage").get<std::string>();
        if (stage == "eval") {
            CHECK(row.at("eval") == ev);  // pass-through, numerically exact
            saw_eval = true;
        } else if (stage == "detect") {
            CHECK(row.at("detect") == det);
            saw_det = true;
        } else if (stage == "calibrate") {
            CHECK(row.at("calibrate") == cal);
            saw_cal = true;
        }
    }
    CHECK(saw_eval);
    CHECK(saw_det);
    CHECK(saw_cal);

    // the merged table mentions every row's label (directory name fallback)
    const std::string table = slurp(dir / "rep" / "report_table.txt");
    CHECK(table.find("eval1") != std::string::npos);
    CHECK(table.find("det1") != std::string::npos);
    CHECK(table.find("cal1") != std::string::npos);

    // merging nothing is an error
    REQUIRE(run_cli(dir, "report --out rep_empty") != 0);
    CHECK_FALSE(fs::exists(dir / "rep_empty"));
}

TEST_CASE("detect runs from precomputed feature csvs without a checkpoint") {
    const fs::path dir = scratch("featmode");

    // hand-built two-layer features: hidden width 2 and a two-class logit
    // layer; outlier activations sit far outside the train range
    auto matrix_csv = [](const std::vector<std::vector<double>>& rows) {
        std::string s = "x0";
        for (std::size_t j = 1; j < rows.front().size(); ++j)
            s += ",x" + std::to_string(j);
        s += "\n";
        for (const auto& r : rows) {
            s += format_double(r[0]);
            for (std::size_t j = 1; j < r.size(); ++j)
                s += "," + format_double(r[j]);
            s += "\n";
        }
        return s;
    };

    std::vector<std::vector<double>> tr_h, tr_z, in_h, in_z, od_h, od_z;
    std::string train_lab = "label,x0,x1\n";
    for (int i = 0; i < 24; ++i) {
        const int c = i % 2;
        const double j = 0.01 * i;
        tr_h.push_back({1.0 + c + j, 2.0 - c - j});
        tr_z.push_back({c == 0 ? 3.0 + j : 1.0 - j, c == 0 ? 1.0 - j : 3.0 + j});
        train_lab += std::to_string(c) + "," + format_double(tr_h.back()[0]) + "," +
                     format_double(tr_h.back()[1]) + "\n";
    }
    for (int i = 0; i < 16; ++i) {
        const int c = i % 2;
        const double j = 0.013 * i;
        in_h.push_back({1.0 + c + j, 2.0 - c - j});
        in_z.push_back({c == 0 ? 3.0 + j : 1.0 - j, c == 0 ? 1.0 - j : 3.0 + j});
    }
    for (int i = 0; i < 10; ++i) {
        od_h.push_back({9.0 + i, -7.0 - i});
        od_z.push_back({0.5, 0.5 + 0.01 * i});
    }
    put(dir / "tr_h.csv", matrix_csv(tr_h));
    put(dir / "tr_z.csv", matrix_csv(tr_z));
    put(dir / "in_h.csv", matrix_csv(in_h));
    put(dir / "in_z.csv", matrix_csv(in_z));
    put(dir / "od_h.csv", matrix_csv(od_h));
    put(dir / "od_z.csv", matrix_csv(od_z));
    put(dir / "train.csv", train_lab);

    put(dir / "gm.cfg",
        "detector=gram\ntrain_features=tr_h.csv,tr_z.csv\n"
        "in_features=in_h.csv,in_z.csv\nood_features=od_h.csv,od_z.csv\n"
        "orders=1,2\nseed=5\n");
    REQUIRE(run_cli(dir, "detect --config gm.cfg --out gm") == 0);
    const Json gm = slurp_json(dir / "gm" / "detect.json");
    CHECK(gm.at("families").at(0).at("auroc").get<double>() == 1.0);

    put(dir / "md.cfg",
        "detector=md\ntrain_features=tr_h.csv,tr_z.csv\n"
        "in_features=in_h.csv,in_z.csv\nood_features=od_h.csv,od_z.csv\n"
        "train=train.csv\nseed=5\n");
    REQUIRE(run_cli(dir, "detect --config md.cfg --out md") == 0);
    const Json md = slurp_json(dir / "md" / "detect.json");
    CHECK(md.at("families").at(0).at("auroc").get<double>() == 1.0);

    // feature mode cannot honor options that need the model itself
    REQUIRE(run_cli(dir, "detect --config md.cfg --out md_eps --epsilon 0.01") != 0);
    CHECK_FALSE(fs::exists(dir / "md_eps"));
}
