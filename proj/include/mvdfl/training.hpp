#pragma once

// Prediction-focused (MSE) and decision-focused (regret) training loops.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mvdfl/data.hpp"
#include "mvdfl/forecaster.hpp"
#include "mvdfl/gmvp.hpp"

namespace mvdfl {

enum class Objective { DflRegret, PflMse };

std::string_view to_string(Objective objective);
Objective objective_from_string(std::string_view name);

struct TrainConfig {
    Objective objective = Objective::DflRegret;
    double learning_rate = 1e-4;
    Index batch_size = 16;
    int max_epochs = 50;
    int patience = 7;
    std::uint64_t seed = 0;
    Index delta_in = 21;
    Index delta_out = 21;
    Index hidden = kDefaultHidden;
    double eps = kDefaultTruncation;
    double ridge_scale = kDefaultRidgeScale;
    /// Diagonal of the initial L; <= 0 derives it from the training windows.
    double init_scale = 0.0;
    double head_gain = kDefaultHeadGain;

    /// Throws InvalidConfig. A zero learning rate is accepted (frozen run).
    void validate() const;
    GmvpOptions gmvp_options() const { return {eps, std::nullopt, ridge_scale}; }
};

struct EpochStat {
    int epoch = 0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double seconds = 0.0;
    long skipped = 0;
};

struct TrainRecord {
    double initial_valid_loss = 0.0;
    std::vector<EpochStat> epochs;
    int best_epoch = 0;  // 0 = untrained parameters
    double best_valid_loss = 0.0;
    std::string stop_reason;  // "early-stopped" or "max-epochs"
};

struct TrainResult {
    ForecasterParams params;
    TrainRecord record;
};

double mse_loss(const Matrix& sigma_hat, const Matrix& sigma_true);
Matrix mse_grad(const Matrix& sigma_hat, const Matrix& sigma_true);

struct AdamState {
    Vector first_moment;
    Vector second_moment;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState zeros(Index size);
};

/// Bias-corrected Adam update in place. Throws NonFinite on a bad gradient.
void adam_step(Vector& params, const Vector& grads, AdamState& state, double lr);

/// Per-sample loss and its parameter gradient; nullopt when the GMVP solve is degenerate.
struct SampleGradient {
    double loss = 0.0;
    ForecasterParams grad;
};

std::optional<double> sample_loss(const ForecasterParams& params, const WindowSample& window,
                                  const TrainConfig& config, std::optional<double> oracle_variance = {});
std::optional<SampleGradient> sample_gradient(const ForecasterParams& params, const WindowSample& window,
                                              const TrainConfig& config,
                                              std::optional<double> oracle_variance = {});

/// Mean objective over windows, skipping degenerate solves.
double evaluate(const ForecasterParams& params, const std::vector<WindowSample>& windows,
                const TrainConfig& config);

/// Mean over assets of sqrt(mean sigma_true(i, i)).
double average_window_volatility(const std::vector<WindowSample>& windows);
/// Mean over assets of the sample standard deviation of the panel.
double average_asset_volatility(const ReturnsPanel& panel);

TrainResult train(const TrainConfig& config, const std::vector<WindowSample>& train_windows,
                  const std::vector<WindowSample>& valid_windows);

struct GridResult {
    std::size_t best_index = 0;
    std::vector<TrainConfig> configs;
    std::vector<std::optional<TrainRecord>> records;  // nullopt = failed
    std::vector<std::string> errors;
    ForecasterParams best_params;
};

GridResult grid_search(const std::vector<TrainConfig>& grid, const std::vector<WindowSample>& train_windows,
                       const std::vector<WindowSample>& valid_windows);

struct HyperparameterCell {
    Index delta_in;
    Index delta_out;
    double learning_rate;
    Index batch_size;
};

/// The published (learning rate, batch) choice for each (delta_in, delta_out)
/// in {5, 21, 63, 126, 252}^2.
const std::vector<HyperparameterCell>& reference_hyperparameter_grid();
std::optional<HyperparameterCell> reference_hyperparameters(Index delta_in, Index delta_out);

/// Columns: epoch, train_loss, valid_loss (epoch 0 = untrained).
void write_train_record_csv(const TrainRecord& record, const std::filesystem::path& path);
/// Columns: epoch, seconds. Kept apart from the record so reports stay byte-stable.
void write_train_timing_csv(const TrainRecord& record, const std::filesystem::path& path);
void write_grid_report_csv(const GridResult& grid, const std::filesystem::path& path);

}  // namespace mvdfl
