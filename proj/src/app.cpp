#include "mvdfl/app.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "mvdfl/analysis.hpp"
#include "mvdfl/backtest.hpp"
#include "mvdfl/covariance.hpp"
#include "mvdfl/csv.hpp"
#include "mvdfl/error.hpp"
#include "mvdfl/theory.hpp"

namespace mvdfl::app {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& message) { throw Error(ErrorKind::InvalidConfig, message); }

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) config_error(where + " must be a JSON object");
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed) known = known || item.key() == a;
        if (!known) config_error("unknown key '" + item.key() + "' in " + where);
    }
}

template <class T>
T get_or(const json& j, const char* key, const T& fallback, const std::string& where) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        config_error("bad type for '" + std::string(key) + "' in " + where);
    }
}

json regime_to_json(const RegimeSpec& r) {
    json out;
    out["length"] = r.length;
    if (r.covariance) {
        json rows = json::array();
        for (Index i = 0; i < r.covariance->rows(); ++i) {
            json row = json::array();
            for (Index k = 0; k < r.covariance->cols(); ++k) row.push_back((*r.covariance)(i, k));
            rows.push_back(row);
        }
        out["covariance"] = rows;
    } else {
        out["volatilities"] = r.volatilities;
        out["correlation"] = r.correlation;
    }
    return out;
}

RegimeSpec regime_from_json(const json& j) {
    check_keys(j, {"length", "covariance", "volatilities", "correlation"}, "data.regimes[]");
    RegimeSpec r;
    r.length = get_or<Index>(j, "length", 0, "data.regimes[]");
    if (j.contains("covariance")) {
        if (j.contains("volatilities")) config_error("a regime takes either 'covariance' or 'volatilities', not both");
        const auto rows = get_or<std::vector<std::vector<double>>>(j, "covariance", {}, "data.regimes[]");
        const auto n = static_cast<Index>(rows.size());
        Matrix m(n, n);
        for (Index i = 0; i < n; ++i) {
            if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != n) {
                config_error("regime covariance must be square");
            }
            for (Index k = 0; k < n; ++k) m(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
        }
        r.covariance = m;
    } else {
        r.volatilities = get_or<std::vector<double>>(j, "volatilities", {}, "data.regimes[]");
        r.correlation = get_or<double>(j, "correlation", 0.0, "data.regimes[]");
    }
    return r;
}

std::vector<WindowSample> windows_for(const ReturnsPanel& panel, const ExperimentConfig& config) {
    return make_windows(panel, config.delta_in, config.delta_out, 1);
}

void write_echo(const ExperimentConfig& config, const Layout& layout) {
    std::ofstream out(layout.configs / "experiment.json");
    if (!out) throw Error(ErrorKind::Io, "cannot write " + (layout.configs / "experiment.json").string());
    out << config_to_json(config).dump(2) << '\n';
}

Objective objective_for(StrategyKind kind) {
    return kind == StrategyKind::Dfl ? Objective::DflRegret : Objective::PflMse;
}

Strategy strategy_for(const ExperimentConfig& config, const Layout& layout, StrategyKind kind, std::uint64_t seed,
                      const ReturnsPanel& panel) {
    if (kind == StrategyKind::EW) return make_equal_weight();
    if (!is_learned(kind)) return make_estimator_strategy(kind, config.gmvp_options());
    const fs::path path = checkpoint_path(layout, to_string(kind), seed);
    ForecasterParams params = load_checkpoint(path);
    const auto& s = params.shape();
    if (s.n_assets != panel.n_assets() || s.input_len != config.delta_in) {
        throw Error(ErrorKind::State, "checkpoint " + path.filename().string() + " does not match the panel (" +
                                          std::to_string(s.n_assets) + " assets, delta_in " +
                                          std::to_string(s.input_len) + ")");
    }
    return make_learned_strategy(kind, std::move(params), config.gmvp_options());
}

}  // namespace

Matrix RegimeSpec::resolve() const {
    if (covariance) return *covariance;
    const auto n = static_cast<Index>(volatilities.size());
    if (n == 0) config_error("regime needs 'covariance' or 'volatilities'");
    const Vector vol = Eigen::Map<const Vector>(volatilities.data(), n);
    Matrix corr = Matrix::Constant(n, n, correlation);
    corr.diagonal().setOnes();
    return vol.asDiagonal() * corr * vol.asDiagonal();
}

std::vector<RegimeSpec> default_regimes(Index n_assets) {
    RegimeSpec calm, stressed;
    calm.length = stressed.length = 126;
    calm.correlation = stressed.correlation = 0.3;
    for (Index i = 0; i < n_assets; ++i) {
        const double v = n_assets > 1 ? 0.004 + 0.016 * static_cast<double>(i) / static_cast<double>(n_assets - 1)
                                      : 0.01;
        calm.volatilities.push_back(v);
        stressed.volatilities.push_back(2.0 * v);
    }
    return {calm, stressed};
}

ExperimentConfig config_from_json(const json& j) {
    check_keys(j, {"name", "data", "corr_threshold", "delta_in", "delta_out", "split", "strategies", "training",
                   "seeds", "eps", "ridge_scale", "analysis", "theory", "output_dir"},
               "config");
    ExperimentConfig c;
    c.name = get_or<std::string>(j, "name", c.name, "config");

    if (j.contains("data")) {
        const json& d = j.at("data");
        check_keys(d, {"source", "path", "n_assets", "n_rows", "seed", "start_date", "regimes"}, "data");
        c.data.source = get_or<std::string>(d, "source", c.data.source, "data");
        c.data.path = get_or<std::string>(d, "path", "", "data");
        c.data.n_assets = get_or<Index>(d, "n_assets", c.data.n_assets, "data");
        c.data.n_rows = get_or<Index>(d, "n_rows", c.data.n_rows, "data");
        c.data.seed = get_or<std::uint64_t>(d, "seed", c.data.seed, "data");
        c.data.start_date = get_or<std::string>(d, "start_date", c.data.start_date, "data");
        if (d.contains("regimes")) {
            if (!d.at("regimes").is_array()) config_error("data.regimes must be an array");
            for (const auto& r : d.at("regimes")) c.data.regimes.push_back(regime_from_json(r));
        }
    }
    if (c.data.source == "synthetic" && c.data.regimes.empty()) c.data.regimes = default_regimes(c.data.n_assets);

    if (j.contains("corr_threshold")) {
        if (j.at("corr_threshold").is_null()) {
            c.corr_threshold.reset();
        } else {
            c.corr_threshold = get_or<double>(j, "corr_threshold", 0.95, "config");
        }
    }
    c.delta_in = get_or<Index>(j, "delta_in", c.delta_in, "config");
    c.delta_out = get_or<Index>(j, "delta_out", c.delta_out, "config");
    if (j.contains("split")) {
        const json& s = j.at("split");
        check_keys(s, {"train", "valid", "test"}, "split");
        c.split = SplitSpec(get_or<double>(s, "train", 0.6, "split"), get_or<double>(s, "valid", 0.2, "split"),
                            get_or<double>(s, "test", 0.2, "split"));
    }
    c.strategies = get_or<std::vector<std::string>>(j, "strategies", c.strategies, "config");

    if (j.contains("training")) {
        const json& t = j.at("training");
        check_keys(t, {"learning_rates", "batch_sizes", "reference_grid", "max_epochs", "patience", "hidden",
                       "init_scale", "head_gain"},
                   "training");
        auto& tr = c.training;
        tr.learning_rates = get_or<std::vector<double>>(t, "learning_rates", tr.learning_rates, "training");
        tr.batch_sizes = get_or<std::vector<Index>>(t, "batch_sizes", tr.batch_sizes, "training");
        tr.reference_grid = get_or<bool>(t, "reference_grid", tr.reference_grid, "training");
        tr.max_epochs = get_or<int>(t, "max_epochs", tr.max_epochs, "training");
        tr.patience = get_or<int>(t, "patience", tr.patience, "training");
        tr.hidden = get_or<Index>(t, "hidden", tr.hidden, "training");
        tr.init_scale = get_or<double>(t, "init_scale", tr.init_scale, "training");
        tr.head_gain = get_or<double>(t, "head_gain", tr.head_gain, "training");
    }
    c.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", c.seeds, "config");
    c.eps = get_or<double>(j, "eps", c.eps, "config");
    c.ridge_scale = get_or<double>(j, "ridge_scale", c.ridge_scale, "config");

    if (j.contains("analysis")) {
        const json& a = j.at("analysis");
        check_keys(a, {"strategy", "seed", "rank_k", "lower_pct", "upper_pct"}, "analysis");
        c.analysis.strategy = get_or<std::string>(a, "strategy", c.analysis.strategy, "analysis");
        c.analysis.seed = get_or<std::uint64_t>(a, "seed", c.analysis.seed, "analysis");
        c.analysis.rank_k = get_or<std::vector<Index>>(a, "rank_k", c.analysis.rank_k, "analysis");
        c.analysis.lower_pct = get_or<double>(a, "lower_pct", c.analysis.lower_pct, "analysis");
        c.analysis.upper_pct = get_or<double>(a, "upper_pct", c.analysis.upper_pct, "analysis");
    }
    if (j.contains("theory")) {
        const json& t = j.at("theory");
        check_keys(t, {"n_instances", "n_assets", "seed"}, "theory");
        c.theory.n_instances = get_or<Index>(t, "n_instances", c.theory.n_instances, "theory");
        c.theory.n_assets = get_or<std::vector<Index>>(t, "n_assets", c.theory.n_assets, "theory");
        c.theory.seed = get_or<std::uint64_t>(t, "seed", c.theory.seed, "theory");
    }
    c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir.string(), "config");
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    json d;
    d["source"] = c.data.source;
    d["path"] = c.data.path.string();
    d["n_assets"] = c.data.n_assets;
    d["n_rows"] = c.data.n_rows;
    d["seed"] = c.data.seed;
    d["start_date"] = c.data.start_date;
    d["regimes"] = json::array();
    for (const auto& r : c.data.regimes) d["regimes"].push_back(regime_to_json(r));
    j["data"] = d;
    j["corr_threshold"] = c.corr_threshold ? json(*c.corr_threshold) : json(nullptr);
    j["delta_in"] = c.delta_in;
    j["delta_out"] = c.delta_out;
    j["split"] = {{"train", c.split.train_frac}, {"valid", c.split.valid_frac}, {"test", c.split.test_frac}};
    j["strategies"] = c.strategies;
    j["training"] = {{"learning_rates", c.training.learning_rates},
                     {"batch_sizes", c.training.batch_sizes},
                     {"reference_grid", c.training.reference_grid},
                     {"max_epochs", c.training.max_epochs},
                     {"patience", c.training.patience},
                     {"hidden", c.training.hidden},
                     {"init_scale", c.training.init_scale},
                     {"head_gain", c.training.head_gain}};
    j["seeds"] = c.seeds;
    j["eps"] = c.eps;
    j["ridge_scale"] = c.ridge_scale;
    j["analysis"] = {{"strategy", c.analysis.strategy},
                     {"seed", c.analysis.seed},
                     {"rank_k", c.analysis.rank_k},
                     {"lower_pct", c.analysis.lower_pct},
                     {"upper_pct", c.analysis.upper_pct}};
    j["theory"] = {{"n_instances", c.theory.n_instances}, {"n_assets", c.theory.n_assets}, {"seed", c.theory.seed}};
    j["output_dir"] = c.output_dir.string();
    return j;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) config_error("cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        config_error("invalid JSON in " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

void ExperimentConfig::validate() const {
    if (name.empty() || name.find('/') != std::string::npos || name == "." || name == "..") {
        config_error("name must be a nonempty single path component");
    }
    if (data.source == "csv") {
        if (data.path.empty()) config_error("data.path is required for csv data");
        if (!fs::exists(data.path)) config_error("data file not found: " + data.path.string());
    } else if (data.source == "synthetic") {
        if (data.n_assets < 2) config_error("data.n_assets must be >= 2");
        if (data.n_rows < 2) config_error("data.n_rows must be >= 2");
        if (data.regimes.empty()) config_error("data.regimes must be nonempty");
        for (const auto& r : data.regimes) {
            if (r.length < 1) config_error("regime length must be >= 1");
            const Matrix cov = r.resolve();
            if (cov.rows() != data.n_assets) config_error("regime dimension does not match data.n_assets");
        }
        try {
            (void)parse_iso_date(data.start_date);
        } catch (const Error&) {
            config_error("data.start_date is not an ISO date: " + data.start_date);
        }
    } else {
        config_error("data.source must be 'synthetic' or 'csv'");
    }
    if (corr_threshold && !(*corr_threshold > 0.0 && *corr_threshold <= 1.0)) {
        config_error("corr_threshold must lie in (0, 1]");
    }
    if (delta_in < 1) config_error("delta_in must be >= 1");
    if (delta_out < 2) config_error("delta_out must be >= 2");
    if (strategies.empty()) config_error("strategies must be nonempty");
    std::set<std::string> seen;
    bool any_learned = false;
    for (const auto& s : strategies) {
        if (!seen.insert(s).second) config_error("duplicate strategy '" + s + "'");
        any_learned = any_learned || is_learned(strategy_kind_from_string(s));
    }
    if (any_learned && seeds.empty()) config_error("seeds must be nonempty for learned strategies");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) config_error("duplicate seeds");
    if (!training.reference_grid && (training.learning_rates.empty() || training.batch_sizes.empty())) {
        config_error("training.learning_rates and training.batch_sizes must be nonempty");
    }
    for (const auto& tc : training_grid(*this, Objective::DflRegret, 0)) tc.validate();
    if (!(eps > 0.0 && eps < 1.0)) config_error("eps must lie in (0, 1)");
    if (!(ridge_scale >= 0.0)) config_error("ridge_scale must be >= 0");
    (void)strategy_kind_from_string(analysis.strategy);
    if (analysis.rank_k.empty()) config_error("analysis.rank_k must be nonempty");
    for (Index k : analysis.rank_k) {
        if (k < 1) config_error("analysis.rank_k entries must be >= 1");
    }
    if (!(analysis.lower_pct >= 0.0 && analysis.lower_pct < analysis.upper_pct && analysis.upper_pct <= 100.0)) {
        config_error("analysis percentiles must satisfy 0 <= lower < upper <= 100");
    }
    if (theory.n_instances < 1) config_error("theory.n_instances must be >= 1");
    if (theory.n_assets.empty()) config_error("theory.n_assets must be nonempty");
    for (Index n : theory.n_assets) {
        if (n < 2) config_error("theory.n_assets entries must be >= 2");
    }
}

void apply_overrides(ExperimentConfig& config, const Overrides& o) {
    if (o.output_dir) config.output_dir = *o.output_dir;
    if (o.seed) {
        config.seeds = {*o.seed};
        config.analysis.seed = *o.seed;
        config.theory.seed = *o.seed;
    }
}

Layout::Layout(const ExperimentConfig& config)
    : root(config.output_dir / config.name),
      checkpoints(root / "checkpoints"),
      reports(root / "reports"),
      configs(root / "configs"),
      logs(root / "logs") {}

void Layout::create() const {
    for (const auto& dir : {checkpoints, reports, configs, logs}) fs::create_directories(dir);
}

fs::path checkpoint_path(const Layout& layout, std::string_view strategy, std::uint64_t seed) {
    return layout.checkpoints / (std::string(strategy) + "_seed" + std::to_string(seed) + ".ckpt");
}

ReturnsPanel build_panel(const ExperimentConfig& config) {
    ReturnsPanel panel;
    if (config.data.source == "csv") {
        panel = load_returns(config.data.path);
    } else {
        SyntheticConfig sc;
        sc.start_date = parse_iso_date(config.data.start_date);
        for (const auto& r : config.data.regimes) sc.regimes.push_back({r.resolve(), r.length});
        panel = generate_synthetic(config.data.n_assets, config.data.n_rows, config.data.seed, sc);
    }
    if (config.corr_threshold) panel = filter_universe(panel, *config.corr_threshold);
    return panel;
}

PanelSplit build_split(const ExperimentConfig& config) { return split_panel(build_panel(config), config.split); }

std::vector<TrainConfig> training_grid(const ExperimentConfig& config, Objective objective, std::uint64_t seed) {
    TrainConfig base;
    base.objective = objective;
    base.seed = seed;
    base.delta_in = config.delta_in;
    base.delta_out = config.delta_out;
    base.max_epochs = config.training.max_epochs;
    base.patience = config.training.patience;
    base.hidden = config.training.hidden;
    base.eps = config.eps;
    base.ridge_scale = config.ridge_scale;
    base.init_scale = config.training.init_scale;
    base.head_gain = config.training.head_gain;

    std::vector<TrainConfig> grid;
    if (config.training.reference_grid) {
        const auto cell = reference_hyperparameters(config.delta_in, config.delta_out);
        if (!cell) {
            config_error("no reference hyperparameters for delta_in " + std::to_string(config.delta_in) +
                         ", delta_out " + std::to_string(config.delta_out));
        }
        base.learning_rate = cell->learning_rate;
        base.batch_size = cell->batch_size;
        grid.push_back(base);
        return grid;
    }
    for (double lr : config.training.learning_rates) {
        for (Index bs : config.training.batch_sizes) {
            TrainConfig tc = base;
            tc.learning_rate = lr;
            tc.batch_size = bs;
            grid.push_back(tc);
        }
    }
    return grid;
}

int cmd_train(const ExperimentConfig& config, std::ostream& log, int threads) {
    const Layout layout(config);
    layout.create();
    write_echo(config, layout);

    struct Task {
        StrategyKind kind;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (const auto& name : config.strategies) {
        const StrategyKind kind = strategy_kind_from_string(name);
        if (!is_learned(kind)) continue;
        for (auto seed : config.seeds) tasks.push_back({kind, seed});
    }
    if (tasks.empty()) {
        log << "no learned strategies configured; nothing to train\n";
        return kExitOk;
    }

    const PanelSplit split = build_split(config);
    const auto train_windows = windows_for(split.train, config);
    const auto valid_windows = windows_for(split.valid, config);
    log << "panel: " << split.train.n_assets() << " assets; " << train_windows.size() << " train / "
        << valid_windows.size() << " valid windows\n";

    std::vector<std::string> summaries(tasks.size());
    std::vector<std::string> failures(tasks.size());
    parallel_for(tasks.size(), threads, [&](std::size_t i) {
        const Task& t = tasks[i];
        const std::string tag = std::string(to_string(t.kind)) + "_seed" + std::to_string(t.seed);
        try {
            const auto grid = training_grid(config, objective_for(t.kind), t.seed);
            ForecasterParams params;
            TrainRecord record;
            if (grid.size() == 1) {
                TrainResult result = train(grid.front(), train_windows, valid_windows);
                params = std::move(result.params);
                record = std::move(result.record);
            } else {
                GridResult g = grid_search(grid, train_windows, valid_windows);
                write_grid_report_csv(g, layout.reports / ("grid_" + tag + ".csv"));
                params = std::move(g.best_params);
                record = *g.records[g.best_index];
            }
            save_checkpoint(params, checkpoint_path(layout, to_string(t.kind), t.seed));
            write_train_record_csv(record, layout.reports / ("train_" + tag + ".csv"));
            write_train_timing_csv(record, layout.logs / ("timing_" + tag + ".csv"));
            std::ostringstream s;
            s << "trained " << tag << ": best epoch " << record.best_epoch << ", valid loss "
              << format_number(record.initial_valid_loss) << " -> " << format_number(record.best_valid_loss) << " ("
              << record.stop_reason << ")";
            summaries[i] = s.str();
        } catch (const std::exception& e) {
            failures[i] = tag + ": " + e.what();
        }
    });

    bool failed = false;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (!failures[i].empty()) {
            log << "FAILED " << failures[i] << '\n';
            failed = true;
        } else {
            log << summaries[i] << '\n';
        }
    }
    return failed ? kExitRuntime : kExitOk;
}

int cmd_backtest(const ExperimentConfig& config, std::ostream& log) {
    const Layout layout(config);
    layout.create();
    write_echo(config, layout);

    const PanelSplit split = build_split(config);
    const ReturnsPanel& test = split.test;

    std::vector<StrategySpec> specs;
    for (const auto& name : config.strategies) {
        StrategySpec spec;
        spec.name = name;
        spec.kind = strategy_kind_from_string(name);
        if (is_learned(spec.kind)) {
            spec.seeds = config.seeds;
            for (auto seed : config.seeds) {
                spec.instances.push_back(
                    [&config, &layout, &test, kind = spec.kind, seed] { return strategy_for(config, layout, kind, seed, test); });
            }
        } else {
            spec.instances.push_back(
                [&config, &layout, &test, kind = spec.kind] { return strategy_for(config, layout, kind, 0, test); });
        }
        specs.push_back(std::move(spec));
    }

    const SuiteTable table = run_suite(specs, test, config.delta_in, config.delta_out);
    write_vol_table_csv(table, layout.reports / "vol_table.csv");
    write_weights_history_csv(table, test.tickers, layout.reports / "weights_history.csv");

    for (const auto& row : table.rows) {
        log << row.name << ": ";
        if (!row.error.empty()) {
            log << "FAILED (" << row.error << ")\n";
            continue;
        }
        log << format_number(row.mean);
        if (row.has_std) log << " +/- " << format_number(row.stddev) << " over " << row.per_seed.size() << " seeds";
        log << '\n';
    }
    return table.ok() ? kExitOk : kExitRuntime;
}

namespace {

struct HistoryGroup {
    std::string strategy;
    std::string seed;
    std::vector<std::string> dates;
    std::vector<std::vector<double>> rows;

    Matrix weights() const {
        Matrix m(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
        }
        return m;
    }
};

std::vector<HistoryGroup> read_weights_history(const fs::path& path, std::vector<std::string>& tickers) {
    const CsvTable table = read_csv(path);
    if (table.header.size() < 4 || table.header[0] != "strategy" || table.header[1] != "seed" ||
        table.header[2] != "date") {
        config_error("unexpected header in " + path.string());
    }
    tickers.assign(table.header.begin() + 3, table.header.end());
    std::vector<HistoryGroup> groups;
    for (const auto& row : table.rows) {
        if (row.size() != table.header.size()) config_error("ragged row in " + path.string());
        if (groups.empty() || groups.back().strategy != row[0] || groups.back().seed != row[1]) {
            groups.push_back({row[0], row[1], {}, {}});
        }
        std::vector<double> w;
        for (std::size_t c = 3; c < row.size(); ++c) {
            char* end = nullptr;
            const double v = std::strtod(row[c].c_str(), &end);
            if (end == row[c].c_str() || *end != '\0') config_error("non-numeric weight in " + path.string());
            w.push_back(v);
        }
        groups.back().dates.push_back(row[2]);
        groups.back().rows.push_back(std::move(w));
    }
    return groups;
}

}  // namespace

int cmd_analyze(const ExperimentConfig& config, std::ostream& log) {
    const Layout layout(config);
    const fs::path history_path = layout.reports / "weights_history.csv";
    if (!fs::exists(history_path)) config_error("missing " + history_path.string() + "; run backtest first");
    layout.create();

    std::vector<std::string> tickers;
    const auto groups = read_weights_history(history_path, tickers);
    const PanelSplit split = build_split(config);
    if (tickers != split.test.tickers) config_error("weights_history.csv tickers do not match the configured panel");

    const StrategyKind kind = strategy_kind_from_string(config.analysis.strategy);
    const std::string target_seed = is_learned(kind) ? std::to_string(config.analysis.seed) : "";
    const HistoryGroup* target = nullptr;
    for (const auto& g : groups) {
        if (g.strategy == config.analysis.strategy && g.seed == target_seed) target = &g;
    }
    if (target == nullptr) {
        config_error("weights_history.csv has no rows for " + config.analysis.strategy +
                     (target_seed.empty() ? "" : " seed " + target_seed));
    }
    if (kind == StrategyKind::EW) config_error("analysis.strategy must produce a covariance (not EW)");

    // Re-run the target strategy to recover its covariance per rebalance.
    const ReturnsPanel& test = split.test;
    const Strategy strategy = strategy_for(config, layout, kind, config.analysis.seed, test);
    const BacktestReport rep = run_backtest(strategy, test, config.delta_in, config.delta_out);
    if (rep.covariances.empty()) throw Error(ErrorKind::State, "strategy produced no covariance estimates");

    const Index n = test.n_assets();
    Matrix precision = Matrix::Zero(n, n);
    for (const auto& cov : rep.covariances) precision += solve_gmvp_detailed(cov, config.gmvp_options()).precision;
    precision /= static_cast<double>(rep.covariances.size());

    const Permutation perm = bbc_reorder(precision);
    write_matrix_csv(apply_permutation(precision, perm.order), layout.reports / "precision_reordered.csv");
    {
        CsvWriter out(layout.reports / "permutation.csv");
        out.row({"position", "asset_index", "ticker", "block_start"});
        for (std::size_t p = 0; p < perm.order.size(); ++p) {
            const bool start = std::find(perm.block_starts.begin(), perm.block_starts.end(),
                                         static_cast<Index>(p)) != perm.block_starts.end();
            out.cell(p).cell(static_cast<long>(perm.order[p])).cell(tickers[static_cast<std::size_t>(perm.order[p])]);
            out.cell(start ? 1 : 0).end_row();
        }
    }
    {
        CsvWriter out(layout.reports / "attribution_regions.csv");
        out.row({"date", "variance", "diagonal_term", "offdiag_term", "positive_region", "mixed_region",
                 "negative_region", "zero_crossing"});
        for (Index k = 0; k < rep.weights.rows(); ++k) {
            const Index anchor = config.delta_in - 1 + k * config.delta_out;
            const Matrix realized = sample_cov(test.values.middleRows(anchor + 1, config.delta_out)).values;
            const Vector w = rep.weights.row(k).transpose();
            const AttributionReport a = attribution(w, realized);
            out.cell(format_iso_date(rep.rebalance_dates[static_cast<std::size_t>(k)]));
            out.cell(portfolio_variance(w, realized)).cell(a.diagonal_term).cell(a.offdiag_term);
            out.cell(a.positive_region).cell(a.mixed_region).cell(a.negative_region);
            out.cell(static_cast<long>(a.zero_crossing)).end_row();
        }
    }
    {
        CsvWriter out(layout.reports / "rank_precision.csv");
        out.row({"strategy", "seed", "k", "precision"});
        for (const auto& g : groups) {
            for (Index k : config.analysis.rank_k) {
                out.cell(g.strategy).cell(g.seed).cell(static_cast<long>(k));
                out.cell(volatility_rank_precision(split.train, g.weights(), k)).end_row();
            }
        }
    }
    {
        const WeightEnvelope key = weight_distribution(target->weights(), config.analysis.lower_pct,
                                                       config.analysis.upper_pct);
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return key.median(a) > key.median(b); });
        std::vector<Index> rank(static_cast<std::size_t>(n));
        for (std::size_t p = 0; p < order.size(); ++p) rank[static_cast<std::size_t>(order[p])] = static_cast<Index>(p);

        CsvWriter out(layout.reports / "weight_envelope.csv");
        out.row({"strategy", "seed", "ticker", "sort_rank", "median", "lower", "upper"});
        for (const auto& g : groups) {
            const WeightEnvelope env = weight_distribution(g.weights(), config.analysis.lower_pct,
                                                           config.analysis.upper_pct);
            for (Index c = 0; c < n; ++c) {
                out.cell(g.strategy).cell(g.seed).cell(tickers[static_cast<std::size_t>(c)]);
                out.cell(static_cast<long>(rank[static_cast<std::size_t>(c)]));
                out.cell(env.median(c)).cell(env.lower(c)).cell(env.upper(c)).end_row();
            }
        }
    }
    log << "analysis of " << config.analysis.strategy << (target_seed.empty() ? "" : " seed " + target_seed)
        << ": " << rep.covariances.size() << " rebalances, " << perm.block_starts.size() << " blocks\n";
    return kExitOk;
}

int cmd_verify_theory(const ExperimentConfig& config, std::ostream& log, int threads) {
    const Layout layout(config);
    layout.create();
    write_echo(config, layout);

    const auto& sizes = config.theory.n_assets;
    const auto per = static_cast<std::size_t>(config.theory.n_instances);
    std::vector<CertificationRow> rows(sizes.size() * per);
    parallel_for(rows.size(), threads, [&](std::size_t i) {
        const Index n = sizes[i / per];
        const auto inst = static_cast<Index>(i % per);
        rows[i] = certify(theory_instance_seed(config.theory.seed, n, inst), n);
    });
    write_theory_report_csv(rows, layout.reports / "theory_report.csv");

    std::size_t ops = 0, p1 = 0, p2 = 0, p3 = 0, degenerate = 0;
    for (const auto& r : rows) {
        ops += r.prop1.operator_pass ? 1 : 0;
        p1 += r.prop1.pass ? 1 : 0;
        p2 += r.prop2.pass ? 1 : 0;
        p3 += r.prop3.pass ? 1 : 0;
        degenerate += r.prop1.degenerate ? 1 : 0;
    }
    log << rows.size() << " instances (" << degenerate << " degenerate)\n"
        << "  reduced-operator identities: " << ops << " pass\n"
        << "  eigenvalues in spectra of JJ'/J'J: " << p1 << " pass\n"
        << "  closed-form invariant directions: " << p2 << " pass\n"
        << "  loss-gradient projection: " << p3 << " pass\n";
    return kExitOk;
}

int cmd_synth_data(const ExperimentConfig& config, std::ostream& log) {
    if (config.data.source != "synthetic") config_error("synth-data needs data.source = synthetic");
    const Layout layout(config);
    layout.create();
    write_echo(config, layout);
    const ReturnsPanel panel = build_panel(config);
    write_returns_csv(panel, layout.reports / "returns.csv");
    log << "wrote " << panel.n_rows() << " x " << panel.n_assets() << " panel to "
        << (layout.reports / "returns.csv").string() << '\n';
    return kExitOk;
}

int run_command(const std::string& command, const std::optional<fs::path>& config_path, const Overrides& overrides,
                std::ostream& log, std::ostream& err) {
    try {
        ExperimentConfig config = config_path ? load_config(*config_path) : config_from_json(json::object());
        apply_overrides(config, overrides);
        config.validate();
        if (command == "train") return cmd_train(config, log, overrides.threads);
        if (command == "backtest") return cmd_backtest(config, log);
        if (command == "analyze") return cmd_analyze(config, log);
        if (command == "verify-theory") return cmd_verify_theory(config, log, overrides.threads);
        if (command == "synth-data") return cmd_synth_data(config, log);
        err << "error: invalid config: unknown command '" << command << "'\n";
        return kExitConfig;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return e.kind() == ErrorKind::InvalidConfig ? kExitConfig : kExitRuntime;
    } catch (const json::exception& e) {
        err << "error: invalid config: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace mvdfl::app
