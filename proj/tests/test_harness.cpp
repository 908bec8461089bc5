#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "xmetra/harness.hpp"

using namespace xmetra;
namespace fs = std::filesystem;

namespace {

// small synthetic setup that keeps end-to-end runs around a second
std::string tiny_config(const std::string& baseline) {
    std::ostringstream cfg;
    cfg << "task = mtod\n"
        << "baseline = " << baseline << "\n"
        << "seeds = 1\n"
        << "synth.vocab_size = 80\n"
        << "synth.num_intents = 3\n"
        << "synth.num_slot_types = 2\n"
        << "synth.lexical_overlap = 0.3\n"
        << "synth.label_noise = 0.02\n"
        << "synth.source_train_size = 60\n"
        << "synth.source_dev_size = 20\n"
        << "synth.source_test_size = 20\n"
        << "synth.target_train_size = 10\n"
        << "synth.target_dev_size = 60\n"
        << "synth.target_test_size = 40\n"
        << "encoder.embed_dim = 8\n"
        << "encoder.hidden_dim = 10\n"
        << "encoder.dropout = 0.1\n"
        << "episodes.k = 1\n"
        << "episodes.q = 1\n"
        << "episodes.replacement = true\n"
        << "meta.n = 1\n"
        << "meta.batch_size = 2\n"
        << "meta.total_tasks = 6\n"
        << "meta.eval_every = 2\n"
        << "train.batch_size = 16\n"
        << "train.max_steps = 10\n"
        << "train.eval_every = 5\n"
        << "pre.max_steps = 12\n";
    return cfg.str();
}

std::string fresh_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("xmetra_harness_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// cell lookup in a parsed CSV: returns the row where key columns match
const std::vector<std::string>* find_row(const std::vector<std::vector<std::string>>& rows,
                                         const std::map<std::size_t, std::string>& match) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
        bool ok = true;
        for (const auto& [col, want] : match)
            if (rows[i].size() <= col || rows[i][col] != want) ok = false;
        if (ok) return &rows[i];
    }
    return nullptr;
}

}  // namespace

TEST_CASE("kv config parsing") {
    KvConfig kv = KvConfig::from_string("# comment\nmeta.alpha = 0.5\nname=x\n\n");
    CHECK(kv.get_double("meta.alpha", 0.0) == 0.5);
    CHECK(kv.get_string("name") == "x");
    CHECK(kv.get_uint("missing", 7) == 7);
    CHECK_THROWS_AS(kv.get_string("absent"), ConfigError);
    CHECK_THROWS_AS(KvConfig::from_string("no equals sign"), ConfigError);
    CHECK_THROWS_AS(kv.get_double("name", 0.0), ConfigError);
    kv.set("name", "y");
    CHECK(kv.get_string("name") == "y");
    CHECK(kv.echo() == "meta.alpha = 0.5\nname = y\n");
}

TEST_CASE("experiment config resolution") {
    SUBCASE("task-dependent defaults") {
        KvConfig kv = KvConfig::from_string(tiny_config("pre"));
        ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
        CHECK(cfg.meta.inner_lr == 1e-3);
        CHECK(cfg.meta.outer_lr == 1e-2);
        CHECK(cfg.meta.dev_split_fraction == 0.75);
        CHECK(cfg.meta.outer_weight_decay == 1e-3);
        CHECK(cfg.encoder.max_seq_len == 384);
        CHECK(cfg.max_question_len == 30);

        KvConfig qa = KvConfig::from_string(
            "task = qa\ndata.source_train = a\ndata.target_dev = b\ndata.target_test = c\n");
        ExperimentConfig qa_cfg = ExperimentConfig::from_kv(qa);
        CHECK(qa_cfg.meta.inner_lr == 3e-5);
        CHECK(qa_cfg.meta.outer_lr == 3e-5);
        CHECK(qa_cfg.meta.dev_split_fraction == 0.60);
    }
    SUBCASE("defaults mirror the reference setup") {
        KvConfig kv = KvConfig::from_string(
            "synth.vocab_size = 300\n");
        ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
        CHECK(cfg.meta.episode.k == 6);
        CHECK(cfg.meta.episode.q == 6);
        CHECK(cfg.meta.total_tasks == 2500);
        CHECK(cfg.meta.inner_steps == 5);
        CHECK(cfg.train.batch_size == 32);
        CHECK(cfg.train.max_steps == 2000);
    }
    SUBCASE("unknown keys are rejected") {
        CHECK_THROWS_AS(
            ExperimentConfig::from_kv(KvConfig::from_string("meta.alhpa = 0.1\n")),
            ConfigError);
    }
    SUBCASE("exactly one data source") {
        CHECK_THROWS_AS(ExperimentConfig::from_kv(KvConfig::from_string("task = mtod\n")),
                        ConfigError);
        CHECK_THROWS_AS(ExperimentConfig::from_kv(KvConfig::from_string(
                            "synth.vocab_size = 300\ndata.source_train = x\n"
                            "data.target_dev = y\ndata.target_test = z\n")),
                        ConfigError);
    }
    SUBCASE("qa plus synthetic is rejected") {
        CHECK_THROWS_AS(ExperimentConfig::from_kv(
                            KvConfig::from_string("task = qa\nsynth.vocab_size = 300\n")),
                        ConfigError);
    }
}

TEST_CASE("run_experiment_command writes the full artifact set") {
    const std::string out = fresh_dir("run_pre");
    KvConfig kv = KvConfig::from_string(tiny_config("pre"));
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    run_experiment_command(cfg, kv, out);

    CHECK(fs::exists(out + "/summary.csv"));
    CHECK(fs::exists(out + "/config_echo.txt"));
    CHECK(fs::exists(out + "/pre_seed1_train.csv"));

    auto rows = read_csv(out + "/summary.csv");
    REQUIRE(rows.size() == 3);  // header + intent_acc + slot_f1
    CHECK(rows[0] == std::vector<std::string>{"model", "language", "metric", "mean", "std",
                                              "seeds"});
    CHECK(rows[1][0] == "pre");
    CHECK(rows[1][1] == "xx");
    CHECK(rows[1][2] == "intent_acc");
    CHECK(std::stod(rows[1][3]) >= 0.0);
    CHECK(std::stod(rows[1][3]) <= 100.0);
    CHECK(rows[2][2] == "slot_f1");

    auto stage = read_csv(out + "/pre_seed1_train.csv");
    CHECK(stage[0] == std::vector<std::string>{"step", "query_loss", "intent_acc", "slot_f1"});
    CHECK(stage.size() >= 2);
}

TEST_CASE("summary is byte-identical across reruns of the same seed") {
    KvConfig kv = KvConfig::from_string(tiny_config("x_metra_ada"));
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    const std::string out1 = fresh_dir("det1");
    const std::string out2 = fresh_dir("det2");
    run_experiment_command(cfg, kv, out1);
    run_experiment_command(cfg, kv, out2);
    CHECK(slurp(out1 + "/summary.csv") == slurp(out2 + "/summary.csv"));
    CHECK(slurp(out1 + "/x_metra_ada_seed1_stage1.csv") ==
          slurp(out2 + "/x_metra_ada_seed1_stage1.csv"));
    CHECK(slurp(out1 + "/x_metra_ada_seed1_stage2.csv") ==
          slurp(out2 + "/x_metra_ada_seed1_stage2.csv"));
}

TEST_CASE("downsample fraction 1.0 reproduces the unsweeped run") {
    KvConfig kv = KvConfig::from_string(tiny_config("x_metra_ada"));
    kv.set("sweep.fractions", "1.0");
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);

    const std::string sweep_out = fresh_dir("down_sweep");
    downsample_sweep_command(cfg, kv, sweep_out);
    auto sweep = read_csv(sweep_out + "/downsample.csv");
    CHECK(sweep[0] == std::vector<std::string>{"fraction", "seed", "metric", "x_metra_ada",
                                               "ft"});
    const auto* acc_row = find_row(sweep, {{0, "1"}, {1, "1"}, {2, "intent_acc"}});
    REQUIRE(acc_row);

    const std::string run_out = fresh_dir("down_ref");
    run_experiment_command(cfg, kv, run_out);
    auto summary = read_csv(run_out + "/summary.csv");
    const auto* ref = find_row(summary, {{2, "intent_acc"}});
    REQUIRE(ref);
    CHECK((*acc_row)[3] == (*ref)[3]);  // identical doubles, identical strings

    KvConfig ft_kv = KvConfig::from_string(tiny_config("ft"));
    ExperimentConfig ft_cfg = ExperimentConfig::from_kv(ft_kv);
    const std::string ft_out = fresh_dir("down_ft_ref");
    run_experiment_command(ft_cfg, ft_kv, ft_out);
    auto ft_summary = read_csv(ft_out + "/summary.csv");
    const auto* ft_ref = find_row(ft_summary, {{2, "intent_acc"}});
    REQUIRE(ft_ref);
    CHECK((*acc_row)[4] == (*ft_ref)[3]);
}

TEST_CASE("kshot sweep emits curves and skips invalid cells") {
    KvConfig kv = KvConfig::from_string(tiny_config("x_metra_ada"));
    kv.set("task", "mtod");
    kv.set("synth.target_dev_size", "140");  // adapt slice must feed k=2 episodes per class
    kv.set("sweep.k", "1,2");
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    const std::string out = fresh_dir("kshot");
    kshot_sweep_command(cfg, kv, out);
    auto rows = read_csv(out + "/kshot.csv");
    CHECK(rows[0] == std::vector<std::string>{"k", "q", "seed", "step", "status", "intent_acc",
                                              "slot_f1"});
    CHECK(find_row(rows, {{0, "1"}, {1, "1"}, {4, "ok"}}) != nullptr);
    CHECK(find_row(rows, {{0, "2"}, {1, "2"}, {4, "ok"}}) != nullptr);
}

TEST_CASE("freeze sweep: the empty set matches the plain run and all-frozen trains heads only") {
    KvConfig kv = KvConfig::from_string(tiny_config("x_metra_ada"));
    kv.set("sweep.freeze", "none;all");
    ExperimentConfig cfg = ExperimentConfig::from_kv(kv);
    const std::string out = fresh_dir("freeze");
    freeze_sweep_command(cfg, kv, out);
    auto rows = read_csv(out + "/freeze.csv");
    CHECK(rows[0] == std::vector<std::string>{"blocks", "seed", "metric", "value"});
    const auto* none_row = find_row(rows, {{0, "none"}, {2, "intent_acc"}});
    const auto* all_row = find_row(rows, {{0, "0+1"}, {2, "intent_acc"}});
    REQUIRE(none_row);
    REQUIRE(all_row);

    const std::string ref_out = fresh_dir("freeze_ref");
    run_experiment_command(cfg, kv, ref_out);
    auto summary = read_csv(ref_out + "/summary.csv");
    const auto* ref = find_row(summary, {{2, "intent_acc"}});
    REQUIRE(ref);
    CHECK((*none_row)[3] == (*ref)[3]);
}

TEST_CASE("cli end to end") {
    const std::string cli = XMETRA_CLI_PATH;
    const std::string dir = fresh_dir("cli");
    const std::string cfg_path = dir + "/exp.cfg";
    {
        std::ofstream out(cfg_path);
        out << tiny_config("pre");
    }
    auto run = [&](const std::string& args) {
        const int rc = std::system((cli + " " + args + " > /dev/null 2>&1").c_str());
        return WEXITSTATUS(rc);
    };
    SUBCASE("run succeeds and writes the summary") {
        CHECK(run("run --config " + cfg_path + " --out " + dir + "/out") == 0);
        CHECK(fs::exists(dir + "/out/summary.csv"));
    }
    SUBCASE("missing config file exits 2") {
        CHECK(run("run --config " + dir + "/absent.cfg --out " + dir + "/o2") == 2);
    }
    SUBCASE("bad override exits 2") {
        CHECK(run("run --config " + cfg_path + " --out " + dir +
                  "/o3 --override meta.alpha=oops") == 2);
    }
    SUBCASE("missing corpus path exits 2") {
        const std::string bad = dir + "/bad.cfg";
        std::ofstream out(bad);
        out << "task = mtod\ndata.source_train = /nope.jsonl\n";
        out.close();
        CHECK(run("run --config " + bad + " --out " + dir + "/o4") == 2);
    }
    SUBCASE("unreadable corpus file exits 4") {
        const std::string bad = dir + "/io.cfg";
        std::ofstream out(bad);
        out << "task = mtod\ndata.source_train = /nope1.jsonl\n"
            << "data.target_dev = /nope2.jsonl\ndata.target_test = /nope3.jsonl\n";
        out.close();
        CHECK(run("run --config " + bad + " --out " + dir + "/o5") == 4);
    }
    SUBCASE("seed flag overrides the seeds list") {
        CHECK(run("run --config " + cfg_path + " --out " + dir + "/o6 --seed 9") == 0);
        auto rows = read_csv(dir + "/o6/summary.csv");
        CHECK(rows[1][5] == "1");  // one seed
    }
}
