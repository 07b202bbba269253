#include "mvdfl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "mvdfl/csv.hpp"
#include "mvdfl/error.hpp"

namespace mvdfl {

namespace {

bool is_degenerate_solve(const Error& e) {
    return e.kind() == ErrorKind::DegenerateBudget || e.kind() == ErrorKind::SingularMatrix ||
           e.kind() == ErrorKind::DegenerateCovariance;
}

std::vector<std::optional<double>> oracle_variances(const std::vector<WindowSample>& windows,
                                                    const TrainConfig& config) {
    std::vector<std::optional<double>> out(windows.size());
    if (config.objective != Objective::DflRegret) return out;
    const auto opts = config.gmvp_options();
    for (std::size_t i = 0; i < windows.size(); ++i) {
        try {
            const Vector w = solve_gmvp(windows[i].sigma_true, opts).values;
            out[i] = portfolio_variance(w, windows[i].sigma_true);
        } catch (const Error& e) {
            if (!is_degenerate_solve(e)) throw;
        }
    }
    return out;
}

void check_finite(double loss, const WindowSample& window) {
    if (!std::isfinite(loss)) {
        throw Error(ErrorKind::NonFinite, "non-finite loss at window anchored " + format_iso_date(window.anchor_date));
    }
}

}  // namespace

std::string_view to_string(Objective objective) {
    return objective == Objective::DflRegret ? "DFL" : "PFL";
}

Objective objective_from_string(std::string_view name) {
    if (name == "DFL" || name == "dfl" || name == "regret") return Objective::DflRegret;
    if (name == "PFL" || name == "pfl" || name == "mse") return Objective::PflMse;
    throw Error(ErrorKind::InvalidConfig, "unknown objective '" + std::string(name) + "'");
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw Error(ErrorKind::InvalidConfig, "learning_rate must be a finite nonnegative number");
    }
    if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
    if (max_epochs < 1) throw Error(ErrorKind::InvalidConfig, "max_epochs must be >= 1");
    if (patience < 1 || patience >= max_epochs) {
        throw Error(ErrorKind::InvalidConfig, "patience must satisfy 1 <= patience < max_epochs");
    }
    if (delta_in < 1 || delta_out < 2) {
        throw Error(ErrorKind::InvalidConfig, "delta_in must be >= 1 and delta_out >= 2");
    }
    if (hidden < 1) throw Error(ErrorKind::InvalidConfig, "hidden must be >= 1");
    if (!(eps > 0.0 && eps < 1.0)) throw Error(ErrorKind::InvalidConfig, "eps must lie in (0, 1)");
    if (!(ridge_scale >= 0.0)) throw Error(ErrorKind::InvalidConfig, "ridge_scale must be >= 0");
    if (!(head_gain >= 0.0) || !std::isfinite(head_gain)) {
        throw Error(ErrorKind::InvalidConfig, "head_gain must be a finite nonnegative number");
    }
}

double mse_loss(const Matrix& sigma_hat, const Matrix& sigma_true) {
    if (sigma_hat.rows() != sigma_true.rows() || sigma_hat.cols() != sigma_true.cols()) {
        throw Error(ErrorKind::Shape, "MSE operands differ in shape");
    }
    return (sigma_hat - sigma_true).squaredNorm() / static_cast<double>(sigma_hat.size());
}

Matrix mse_grad(const Matrix& sigma_hat, const Matrix& sigma_true) {
    if (sigma_hat.rows() != sigma_true.rows() || sigma_hat.cols() != sigma_true.cols()) {
        throw Error(ErrorKind::Shape, "MSE operands differ in shape");
    }
    return (2.0 / static_cast<double>(sigma_hat.size())) * (sigma_hat - sigma_true);
}

AdamState AdamState::zeros(Index size) {
    AdamState s;
    s.first_moment = Vector::Zero(size);
    s.second_moment = Vector::Zero(size);
    return s;
}

void adam_step(Vector& params, const Vector& grads, AdamState& state, double lr) {
    if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
        throw Error(ErrorKind::State, "Adam state does not match parameter size");
    }
    if (!grads.allFinite()) throw Error(ErrorKind::NonFinite, "non-finite gradient passed to Adam");
    ++state.step;
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
    state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    params.array() -= lr * (state.first_moment.array() / c1) /
                      ((state.second_moment.array() / c2).sqrt() + state.epsilon);
}

std::optional<double> sample_loss(const ForecasterParams& params, const WindowSample& window,
                                  const TrainConfig& config, std::optional<double> oracle_variance) {
    const ForwardResult fwd = forward(params, window.x_in);
    if (config.objective == Objective::PflMse) return mse_loss(fwd.sigma, window.sigma_true);
    try {
        const auto opts = config.gmvp_options();
        const auto w = solve_gmvp(fwd.sigma, opts);
        const RegretValue r = oracle_variance ? regret(w, window.sigma_true, *oracle_variance)
                                              : regret(w, window.sigma_true, opts);
        return r.regret;
    } catch (const Error& e) {
        if (is_degenerate_solve(e)) return std::nullopt;
        throw;
    }
}

std::optional<SampleGradient> sample_gradient(const ForecasterParams& params, const WindowSample& window,
                                              const TrainConfig& config, std::optional<double> oracle_variance) {
    const ForwardResult fwd = forward(params, window.x_in);
    Matrix upstream;
    double loss = 0.0;
    if (config.objective == Objective::PflMse) {
        loss = mse_loss(fwd.sigma, window.sigma_true);
        upstream = mse_grad(fwd.sigma, window.sigma_true);
    } else {
        try {
            const auto opts = config.gmvp_options();
            const GmvpSolution sol = solve_gmvp_detailed(fwd.sigma, opts);
            const RegretValue r = oracle_variance ? regret(sol.weights, window.sigma_true, *oracle_variance)
                                                  : regret(sol.weights, window.sigma_true, opts);
            loss = r.regret;
            upstream = grad_loss_wrt_sigma(sol, window.sigma_true);
        } catch (const Error& e) {
            if (is_degenerate_solve(e)) return std::nullopt;
            throw;
        }
    }
    return SampleGradient{loss, backward(params, fwd.cache, upstream)};
}

double evaluate(const ForecasterParams& params, const std::vector<WindowSample>& windows,
                const TrainConfig& config) {
    const auto oracle = oracle_variances(windows, config);
    double total = 0.0;
    long used = 0;
    for (std::size_t i = 0; i < windows.size(); ++i) {
        if (config.objective == Objective::DflRegret && !oracle[i]) continue;
        const auto loss = sample_loss(params, windows[i], config, oracle[i]);
        if (!loss) continue;
        check_finite(*loss, windows[i]);
        total += *loss;
        ++used;
    }
    if (used == 0) throw Error(ErrorKind::State, "no window could be evaluated");
    return total / static_cast<double>(used);
}

double average_window_volatility(const std::vector<WindowSample>& windows) {
    if (windows.empty()) throw Error(ErrorKind::InsufficientHistory, "no windows");
    Vector var = Vector::Zero(windows.front().sigma_true.rows());
    for (const auto& w : windows) var += w.sigma_true.diagonal();
    var /= static_cast<double>(windows.size());
    return var.array().sqrt().mean();
}

double average_asset_volatility(const ReturnsPanel& panel) {
    const Matrix centered = panel.values.rowwise() - panel.values.colwise().mean();
    const double denom = static_cast<double>(std::max<Index>(panel.n_rows() - 1, 1));
    return (centered.colwise().squaredNorm().array() / denom).sqrt().mean();
}

TrainResult train(const TrainConfig& config, const std::vector<WindowSample>& train_windows,
                  const std::vector<WindowSample>& valid_windows) {
    config.validate();
    if (train_windows.empty() || valid_windows.empty()) {
        throw Error(ErrorKind::InsufficientHistory, "training and validation windows must be nonempty");
    }
    const Index n_assets = train_windows.front().x_in.cols();
    const double init_scale = config.init_scale > 0.0 ? config.init_scale : average_window_volatility(train_windows);
    ForecasterParams params = init_params(config.seed, config.delta_in, n_assets, config.hidden, init_scale,
                                          config.head_gain);

    const auto train_oracle = oracle_variances(train_windows, config);

    TrainResult result;
    TrainRecord& record = result.record;
    record.initial_valid_loss = evaluate(params, valid_windows, config);
    record.best_valid_loss = record.initial_valid_loss;
    record.best_epoch = 0;
    result.params = params;

    AdamState adam = AdamState::zeros(params.data().size());
    std::vector<std::size_t> order(train_windows.size());
    int since_best = 0;
    record.stop_reason = "max-epochs";

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 shuffle_rng(config.seed + static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        long used = 0;
        long skipped = 0;
        Vector grad_sum(params.data().size());
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            grad_sum.setZero();
            long in_batch = 0;
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                const auto& window = train_windows[i];
                if (config.objective == Objective::DflRegret && !train_oracle[i]) {
                    ++skipped;
                    continue;
                }
                const auto sg = sample_gradient(params, window, config, train_oracle[i]);
                if (!sg) {
                    ++skipped;
                    continue;
                }
                check_finite(sg->loss, window);
                loss_sum += sg->loss;
                grad_sum += sg->grad.data();
                ++in_batch;
            }
            if (in_batch == 0) continue;
            used += in_batch;
            adam_step(params.data(), grad_sum / static_cast<double>(in_batch), adam, config.learning_rate);
        }
        if (static_cast<double>(skipped) > 0.01 * static_cast<double>(train_windows.size())) {
            throw Error(ErrorKind::State, "epoch " + std::to_string(epoch) + " skipped " + std::to_string(skipped) +
                                              " of " + std::to_string(train_windows.size()) +
                                              " samples (degenerate GMVP solves)");
        }

        EpochStat stat;
        stat.epoch = epoch;
        stat.train_loss = used > 0 ? loss_sum / static_cast<double>(used) : 0.0;
        stat.valid_loss = evaluate(params, valid_windows, config);
        stat.skipped = skipped;
        stat.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        record.epochs.push_back(stat);

        if (stat.valid_loss < record.best_valid_loss) {
            record.best_valid_loss = stat.valid_loss;
            record.best_epoch = epoch;
            result.params = params;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            record.stop_reason = "early-stopped";
            break;
        }
    }
    return result;
}

GridResult grid_search(const std::vector<TrainConfig>& grid, const std::vector<WindowSample>& train_windows,
                       const std::vector<WindowSample>& valid_windows) {
    if (grid.empty()) throw Error(ErrorKind::InvalidConfig, "hyperparameter grid is empty");
    GridResult out;
    out.configs = grid;
    out.records.resize(grid.size());
    out.errors.resize(grid.size());
    std::optional<double> best;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        try {
            TrainResult r = train(grid[i], train_windows, valid_windows);
            if (!best || r.record.best_valid_loss < *best) {
                best = r.record.best_valid_loss;
                out.best_index = i;
                out.best_params = std::move(r.params);
            }
            out.records[i] = std::move(r.record);
        } catch (const Error& e) {
            out.errors[i] = e.what();
        }
    }
    if (!best) {
        std::string all = "every grid configuration failed:";
        for (const auto& e : out.errors) all += " [" + e + "]";
        throw Error(ErrorKind::State, all);
    }
    return out;
}

const std::vector<HyperparameterCell>& reference_hyperparameter_grid() {
    static const std::vector<HyperparameterCell> grid = [] {
        const Index deltas[5] = {5, 21, 63, 126, 252};
        // rows: delta_out; columns: delta_in
        const double lr[5][5] = {{1e-4, 1e-5, 1e-4, 1e-4, 1e-5},
                                 {1e-5, 1e-5, 1e-5, 1e-4, 1e-4},
                                 {1e-4, 1e-4, 1e-4, 1e-4, 1e-4},
                                 {1e-5, 1e-4, 1e-4, 1e-4, 1e-5},
                                 {1e-3, 1e-5, 1e-3, 1e-4, 1e-5}};
        const Index batch[5][5] = {{64, 16, 16, 32, 16},
                                   {32, 16, 64, 32, 32},
                                   {64, 32, 64, 64, 32},
                                   {64, 32, 64, 64, 16},
                                   {32, 16, 16, 16, 16}};
        std::vector<HyperparameterCell> cells;
        for (int o = 0; o < 5; ++o) {
            for (int i = 0; i < 5; ++i) cells.push_back({deltas[i], deltas[o], lr[o][i], batch[o][i]});
        }
        return cells;
    }();
    return grid;
}

std::optional<HyperparameterCell> reference_hyperparameters(Index delta_in, Index delta_out) {
    for (const auto& c : reference_hyperparameter_grid()) {
        if (c.delta_in == delta_in && c.delta_out == delta_out) return c;
    }
    return std::nullopt;
}

void write_train_record_csv(const TrainRecord& record, const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row({"epoch", "train_loss", "valid_loss"});
    csv.cell(0).cell("").cell(record.initial_valid_loss).end_row();
    for (const auto& e : record.epochs) csv.cell(e.epoch).cell(e.train_loss).cell(e.valid_loss).end_row();
}

void write_train_timing_csv(const TrainRecord& record, const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row({"epoch", "seconds"});
    for (const auto& e : record.epochs) csv.cell(e.epoch).cell(e.seconds).end_row();
}

void write_grid_report_csv(const GridResult& grid, const std::filesystem::path& path) {
    CsvWriter csv(path);
    csv.row({"index", "objective", "learning_rate", "batch_size", "best_epoch", "best_valid_loss", "stop_reason",
             "selected", "error"});
    for (std::size_t i = 0; i < grid.configs.size(); ++i) {
        const auto& c = grid.configs[i];
        csv.cell(i).cell(to_string(c.objective)).cell(c.learning_rate).cell(static_cast<long>(c.batch_size));
        if (grid.records[i]) {
            csv.cell(grid.records[i]->best_epoch).cell(grid.records[i]->best_valid_loss).cell(grid.records[i]->stop_reason);
        } else {
            csv.cell("").cell("").cell("failed");
        }
        csv.cell(i == grid.best_index ? 1 : 0).cell(grid.errors[i]).end_row();
    }
}

}  // namespace mvdfl
