#pragma once

// Experiment driver behind the command-line tool. Every run is described by a
// JSON ExperimentConfig; the fully defaulted config is echoed to
// out/<name>/configs/experiment.json so that it can be re-run verbatim.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mvdfl/data.hpp"
#include "mvdfl/training.hpp"

namespace mvdfl::app {

struct RegimeSpec {
    Index length = 0;
    /// Either an explicit covariance, or volatilities with a constant correlation.
    std::optional<Matrix> covariance;
    std::vector<double> volatilities;
    double correlation = 0.0;

    Matrix resolve() const;
};

struct DataSpec {
    std::string source = "synthetic";  // "synthetic" or "csv"
    std::filesystem::path path;        // csv only
    Index n_assets = 10;
    Index n_rows = 4000;
    std::uint64_t seed = 42;
    std::string start_date = "2010-01-04";
    std::vector<RegimeSpec> regimes;
};

struct TrainingSpec {
    std::vector<double> learning_rates{1e-5};
    std::vector<Index> batch_sizes{16};
    /// Use the reference (delta_in, delta_out) cell instead of the lists above.
    bool reference_grid = false;
    int max_epochs = 50;
    int patience = 7;
    Index hidden = kDefaultHidden;
    double init_scale = 0.0;
    double head_gain = kDefaultHeadGain;
};

struct AnalysisSpec {
    std::string strategy = "DFL";
    std::uint64_t seed = 0;
    std::vector<Index> rank_k{3};
    double lower_pct = 2.5;
    double upper_pct = 97.5;
};

struct TheorySpec {
    Index n_instances = 100;
    std::vector<Index> n_assets{4, 6, 8};
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DataSpec data;
    std::optional<double> corr_threshold = 0.95;
    Index delta_in = 21;
    Index delta_out = 21;
    SplitSpec split;
    std::vector<std::string> strategies{"EW", "Historical", "LW-D", "LW-CC", "OAS", "PFL", "DFL"};
    TrainingSpec training;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    double eps = kDefaultTruncation;
    double ridge_scale = kDefaultRidgeScale;
    AnalysisSpec analysis;
    TheorySpec theory;
    std::filesystem::path output_dir = "out";

    /// Throws Error(InvalidConfig).
    void validate() const;
    GmvpOptions gmvp_options() const { return {eps, std::nullopt, ridge_scale}; }
};

/// The default synthetic universe: N = 10 assets with volatilities spread
/// from 0.4% to 2% per day, constant correlation 0.3, alternating every 126
/// days with a regime where every volatility is doubled.
std::vector<RegimeSpec> default_regimes(Index n_assets);

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

struct Overrides {
    std::optional<std::filesystem::path> output_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

void apply_overrides(ExperimentConfig& config, const Overrides& overrides);

struct Layout {
    std::filesystem::path root;
    std::filesystem::path checkpoints;
    std::filesystem::path reports;
    std::filesystem::path configs;
    std::filesystem::path logs;

    explicit Layout(const ExperimentConfig& config);
    void create() const;
};

std::filesystem::path checkpoint_path(const Layout& layout, std::string_view strategy, std::uint64_t seed);

ReturnsPanel build_panel(const ExperimentConfig& config);
PanelSplit build_split(const ExperimentConfig& config);

/// Grid of training configs for one (objective, seed).
std::vector<TrainConfig> training_grid(const ExperimentConfig& config, Objective objective, std::uint64_t seed);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Each command writes under Layout(config), logs progress to `log`, and
/// returns an exit code. Exceptions escape; run_command maps them to codes.
int cmd_train(const ExperimentConfig& config, std::ostream& log, int threads = 1);
int cmd_backtest(const ExperimentConfig& config, std::ostream& log);
int cmd_analyze(const ExperimentConfig& config, std::ostream& log);
int cmd_verify_theory(const ExperimentConfig& config, std::ostream& log, int threads = 1);
int cmd_synth_data(const ExperimentConfig& config, std::ostream& log);

/// Dispatch by subcommand name with error-to-exit-code mapping.
int run_command(const std::string& command, const std::optional<std::filesystem::path>& config_path,
                const Overrides& overrides, std::ostream& log, std::ostream& err);

/// Deterministic parallel map: results are stored by index regardless of
/// scheduling.
template <class F>
void parallel_for(std::size_t count, int threads, F&& body);

}  // namespace mvdfl::app

#include "mvdfl/detail/parallel.hpp"
