#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mvdfl/app.hpp"

int main(int argc, char** argv) {
    CLI::App cli{"Decision-focused minimum-variance portfolio experiments"};
    cli.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    cli.add_option("--config", config_path, "experiment config (JSON); defaults are used when omitted")
        ->check(CLI::ExistingFile);
    cli.add_option("--out", out_dir, "output root (overrides output_dir)");
    cli.add_option("--seed", seed, "run with this single seed (training, analysis and theory)");
    cli.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

    for (const auto* name : {"train", "backtest", "analyze", "verify-theory", "synth-data"}) {
        cli.add_subcommand(name)->fallthrough();
    }
    cli.get_subcommand("train")->description("train PFL/DFL forecasters; one checkpoint per (strategy, seed)");
    cli.get_subcommand("backtest")->description("rolling buy-and-hold backtest; writes vol_table.csv and weights_history.csv");
    cli.get_subcommand("analyze")->description("precision reordering, attribution, rank precision, weight envelopes");
    cli.get_subcommand("verify-theory")->description("numerical certification of the decision-Jacobian spectrum");
    cli.get_subcommand("synth-data")->description("write the configured synthetic return panel");

    try {
        cli.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = cli.exit(e);
        return code == 0 ? 0 : mvdfl::app::kExitConfig;
    }

    mvdfl::app::Overrides overrides;
    if (!out_dir.empty()) overrides.output_dir = out_dir;
    overrides.seed = seed;
    overrides.threads = threads;
    const std::optional<std::filesystem::path> config =
        config_path.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_path);
    return mvdfl::app::run_command(cli.get_subcommands().front()->get_name(), config, overrides, std::cout, std::cerr);
}
