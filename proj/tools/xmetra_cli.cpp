// Experiment harness entry point.
//
//   xmetra run        --config exp.cfg --out results/
//   xmetra kshot      --config exp.cfg --out results/
//   xmetra downsample --config exp.cfg --out results/
//   xmetra freeze     --config exp.cfg --out results/
//
// Shared flags: --seed N (replaces the seeds list), --override KEY=VAL
// (repeatable, wins over file keys). XMETRA_WORKERS caps parallel sweep
// cells. Exit codes: 0 ok, 2 config error, 3 divergence, 4 I/O error.

#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xmetra/harness.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    std::int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "flat key=value config file")->required();
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--override", args.overrides, "KEY=VAL config override (repeatable)");
    cmd->add_option("--seed", args.seed, "single master seed (replaces the seeds list)");
}

xmetra::ExperimentConfig resolve(const CommonArgs& args, xmetra::KvConfig& kv) {
    kv = xmetra::KvConfig::from_file(args.config_path);
    for (const std::string& ov : args.overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw xmetra::ConfigError("override must look like KEY=VAL: " + ov);
        kv.set(ov.substr(0, eq), ov.substr(eq + 1));
    }
    if (args.seed >= 0) kv.set("seeds", std::to_string(args.seed));
    return xmetra::ExperimentConfig::from_kv(kv);
}

int dispatch(const std::string& command, const CommonArgs& args) {
    try {
        xmetra::KvConfig kv;
        xmetra::ExperimentConfig cfg = resolve(args, kv);
        if (command == "run") {
            xmetra::run_experiment_command(cfg, kv, args.out_dir);
        } else if (command == "kshot") {
            xmetra::kshot_sweep_command(cfg, kv, args.out_dir);
        } else if (command == "downsample") {
            xmetra::downsample_sweep_command(cfg, kv, args.out_dir);
        } else {
            xmetra::freeze_sweep_command(cfg, kv, args.out_dir);
        }
        return 0;
    } catch (const xmetra::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const xmetra::DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const xmetra::IoError& e) {
        std::fprintf(stderr, "i/o error: %s\n", e.what());
        return 4;
    } catch (const xmetra::ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-lingual meta-transfer experiment harness"};
    app.require_subcommand(1);

    CommonArgs run_args, kshot_args, down_args, freeze_args;
    CLI::App* run = app.add_subcommand("run", "run one evaluation scheme end to end");
    add_common(run, run_args);
    CLI::App* kshot = app.add_subcommand("kshot", "learning curves over a (k, q) grid");
    add_common(kshot, kshot_args);
    CLI::App* down = app.add_subcommand("downsample", "shrink the target pool and compare to FT");
    add_common(down, down_args);
    CLI::App* freeze = app.add_subcommand("freeze", "final metrics per frozen encoder block set");
    add_common(freeze, freeze_args);

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return dispatch("run", run_args);
    if (kshot->parsed()) return dispatch("kshot", kshot_args);
    if (down->parsed()) return dispatch("downsample", down_args);
    return dispatch("freeze", freeze_args);
}
