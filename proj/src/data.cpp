#include "mvdfl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "mvdfl/covariance.hpp"
#include "mvdfl/csv.hpp"
#include "mvdfl/error.hpp"

namespace mvdfl {

namespace {

bool is_missing_token(std::string_view s) {
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null" || s == "N/A";
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        if (pos == std::string_view::npos) {
            cells.push_back(trim(line.substr(start)));
            break;
        }
        cells.push_back(trim(line.substr(start, pos - start)));
        start = pos + 1;
    }
    return cells;
}

Matrix correlation(const Matrix& values) {
    const Matrix cov = sample_cov(values).values;
    const Vector sd = cov.diagonal().array().sqrt();
    Matrix corr = cov;
    for (Index i = 0; i < corr.rows(); ++i) {
        for (Index j = 0; j < corr.cols(); ++j) corr(i, j) = cov(i, j) / (sd(i) * sd(j));
    }
    return corr;
}

}  // namespace

Date parse_iso_date(std::string_view text) {
    text = trim(text);
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    const bool shape_ok = text.size() == 10 && text[4] == '-' && text[7] == '-';
    if (shape_ok) {
        const char* b = text.data();
        const bool ok = std::from_chars(b, b + 4, y).ec == std::errc{} &&
                        std::from_chars(b + 5, b + 7, m).ec == std::errc{} &&
                        std::from_chars(b + 8, b + 10, d).ec == std::errc{};
        const Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
        if (ok && date.ok()) return date;
    }
    throw Error(ErrorKind::Ingestion, "invalid ISO-8601 date '" + std::string(text) + "'");
}

std::string format_iso_date(const Date& date) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(date.year()),
                  static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
    return buf;
}

ReturnsPanel ReturnsPanel::rows(Index first, Index count) const {
    if (first < 0 || count < 0 || first + count > n_rows()) {
        throw Error(ErrorKind::Shape, "row range out of bounds");
    }
    ReturnsPanel out;
    out.dates.assign(dates.begin() + first, dates.begin() + first + count);
    out.tickers = tickers;
    out.values = values.middleRows(first, count);
    return out;
}

ReturnsPanel ReturnsPanel::columns(const std::vector<Index>& keep) const {
    ReturnsPanel out;
    out.dates = dates;
    out.values.resize(n_rows(), static_cast<Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k) {
        out.values.col(static_cast<Index>(k)) = values.col(keep[k]);
        out.tickers.push_back(tickers[static_cast<std::size_t>(keep[k])]);
    }
    return out;
}

void ReturnsPanel::validate(Index min_assets) const {
    if (static_cast<Index>(dates.size()) != values.rows() ||
        static_cast<Index>(tickers.size()) != values.cols()) {
        throw Error(ErrorKind::Shape, "panel index sizes disagree with value matrix");
    }
    for (std::size_t i = 1; i < dates.size(); ++i) {
        if (!(dates[i - 1] < dates[i])) {
            throw Error(ErrorKind::Ingestion, "dates not strictly increasing at " + format_iso_date(dates[i]));
        }
    }
    if (!values.allFinite()) throw Error(ErrorKind::Ingestion, "panel contains non-finite values");
    if (values.cols() < min_assets) {
        throw Error(ErrorKind::UniverseTooSmall,
                    "need at least " + std::to_string(min_assets) + " assets, have " +
                        std::to_string(values.cols()));
    }
}

SplitSpec::SplitSpec(double train, double valid, double test)
    : train_frac(train), valid_frac(valid), test_frac(test) {
    if (train < 0.0 || valid < 0.0 || test < 0.0 || std::abs(train + valid + test - 1.0) > 1e-12) {
        throw Error(ErrorKind::InvalidConfig, "split fractions must be nonnegative and sum to 1");
    }
}

ReturnsPanel parse_returns_csv(std::string_view text, std::string_view source) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto pos = text.find('\n', start);
        if (pos == std::string_view::npos) pos = text.size();
        const auto line = trim(text.substr(start, pos - start));
        if (!line.empty()) lines.push_back(line);
        start = pos + 1;
    }
    const std::string where(source);
    if (lines.empty()) throw Error(ErrorKind::Ingestion, where + ": empty file");

    const auto header = split_commas(lines[0]);
    if (header.size() < 2) throw Error(ErrorKind::Ingestion, where + ": header needs date and tickers");
    const std::size_t n = header.size() - 1;
    const std::size_t t = lines.size() - 1;

    std::vector<Date> dates(t);
    Matrix values(static_cast<Index>(t), static_cast<Index>(n));
    std::vector<bool> missing(n, false);

    for (std::size_t r = 0; r < t; ++r) {
        const auto cells = split_commas(lines[r + 1]);
        const std::string loc = where + ": row " + std::to_string(r + 2);
        if (cells.size() != header.size()) {
            throw Error(ErrorKind::Ingestion, loc + ": expected " + std::to_string(header.size()) +
                                                  " cells, got " + std::to_string(cells.size()));
        }
        try {
            dates[r] = parse_iso_date(cells[0]);
        } catch (const Error&) {
            throw Error(ErrorKind::Ingestion, loc + " column 1 (date): unparseable date '" +
                                                  std::string(cells[0]) + "'");
        }
        for (std::size_t c = 0; c < n; ++c) {
            const auto cell = cells[c + 1];
            double v = std::numeric_limits<double>::quiet_NaN();
            if (is_missing_token(cell)) {
                missing[c] = true;
            } else {
                const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
                    throw Error(ErrorKind::Ingestion, loc + " column " + std::to_string(c + 2) + " (" +
                                                          std::string(header[c + 1]) +
                                                          "): unparseable number '" + std::string(cell) + "'");
                }
            }
            values(static_cast<Index>(r), static_cast<Index>(c)) = v;
        }
    }

    std::vector<std::size_t> order(t);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dates[a] < dates[b]; });

    ReturnsPanel full;
    full.dates.resize(t);
    full.values.resize(static_cast<Index>(t), static_cast<Index>(n));
    for (std::size_t r = 0; r < t; ++r) {
        full.dates[r] = dates[order[r]];
        full.values.row(static_cast<Index>(r)) = values.row(static_cast<Index>(order[r]));
        if (r > 0 && full.dates[r] == full.dates[r - 1]) {
            throw Error(ErrorKind::Ingestion, where + ": duplicate date " + format_iso_date(full.dates[r]));
        }
    }
    for (std::size_t c = 0; c < n; ++c) full.tickers.emplace_back(header[c + 1]);

    // Missing data or a constant column excludes the whole asset.
    std::vector<Index> keep;
    for (std::size_t c = 0; c < n; ++c) {
        if (missing[c]) continue;
        const auto col = full.values.col(static_cast<Index>(c));
        if (t >= 2 && (col.array() - col.mean()).abs().maxCoeff() == 0.0) continue;
        keep.push_back(static_cast<Index>(c));
    }
    ReturnsPanel out = full.columns(keep);
    out.validate(2);
    return out;
}

ReturnsPanel load_returns(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_returns_csv(ss.str(), path.string());
}

void write_returns_csv(const ReturnsPanel& panel, const std::filesystem::path& path) {
    CsvWriter csv(path);
    std::vector<std::string> header{"date"};
    header.insert(header.end(), panel.tickers.begin(), panel.tickers.end());
    csv.row(header);
    for (Index r = 0; r < panel.n_rows(); ++r) {
        csv.cell(format_iso_date(panel.dates[static_cast<std::size_t>(r)]));
        for (Index c = 0; c < panel.n_assets(); ++c) csv.cell(panel.values(r, c));
        csv.end_row();
    }
}

ReturnsPanel filter_universe(const ReturnsPanel& panel, double corr_threshold) {
    if (!(corr_threshold > 0.0 && corr_threshold <= 1.0)) {
        throw Error(ErrorKind::InvalidConfig, "correlation threshold must lie in (0, 1]");
    }
    const Matrix corr = correlation(panel.values);
    std::vector<Index> keep;
    for (Index j = 0; j < panel.n_assets(); ++j) {
        const bool clash = std::any_of(keep.begin(), keep.end(),
                                       [&](Index i) { return corr(i, j) >= corr_threshold; });
        if (!clash) keep.push_back(j);
    }
    ReturnsPanel out = panel.columns(keep);
    if (out.n_assets() < 2) {
        throw Error(ErrorKind::UniverseTooSmall, "fewer than 2 assets survive the correlation filter");
    }
    return out;
}

std::vector<WindowSample> make_windows(const ReturnsPanel& panel, Index delta_in, Index delta_out,
                                       Index stride) {
    if (delta_in < 1 || delta_out < 1 || stride < 1) {
        throw Error(ErrorKind::InvalidConfig, "window lengths and stride must be positive");
    }
    const Index t = panel.n_rows();
    if (delta_in + delta_out > t) {
        throw Error(ErrorKind::InsufficientHistory,
                    "delta_in + delta_out = " + std::to_string(delta_in + delta_out) + " exceeds " +
                        std::to_string(t) + " rows");
    }
    std::vector<WindowSample> out;
    for (Index anchor = delta_in - 1; anchor + delta_out <= t - 1; anchor += stride) {
        WindowSample s;
        s.x_in = panel.values.middleRows(anchor - delta_in + 1, delta_in);
        s.sigma_true = sample_cov(panel.values.middleRows(anchor + 1, delta_out)).values;
        s.anchor_date = panel.dates[static_cast<std::size_t>(anchor)];
        s.anchor_row = anchor;
        out.push_back(std::move(s));
    }
    return out;
}

PanelSplit split_panel(const ReturnsPanel& panel, const SplitSpec& spec) {
    const Index t = panel.n_rows();
    const auto seg = [t](double frac) {
        return static_cast<Index>(std::floor(static_cast<double>(t) * frac + 1e-9));
    };
    const Index n_valid = seg(spec.valid_frac);
    const Index n_test = seg(spec.test_frac);
    const Index n_train = t - n_valid - n_test;
    return {panel.rows(0, n_train), panel.rows(n_train, n_valid), panel.rows(n_train + n_valid, n_test)};
}

std::vector<Index> regime_schedule(Index n_rows, const SyntheticConfig& config) {
    if (config.regimes.empty()) throw Error(ErrorKind::InvalidConfig, "no regimes given");
    std::vector<Index> schedule;
    schedule.reserve(static_cast<std::size_t>(n_rows));
    std::size_t k = 0;
    while (static_cast<Index>(schedule.size()) < n_rows) {
        const auto& regime = config.regimes[k % config.regimes.size()];
        if (regime.length < 1) throw Error(ErrorKind::InvalidConfig, "regime length must be positive");
        for (Index i = 0; i < regime.length && static_cast<Index>(schedule.size()) < n_rows; ++i) {
            schedule.push_back(static_cast<Index>(k % config.regimes.size()));
        }
        ++k;
    }
    return schedule;
}

ReturnsPanel generate_synthetic(Index n_assets, Index n_rows, std::uint64_t seed,
                                const SyntheticConfig& config) {
    if (n_assets < 1 || n_rows < 1) throw Error(ErrorKind::InvalidConfig, "dimensions must be positive");
    std::vector<Matrix> factors;
    for (std::size_t k = 0; k < config.regimes.size(); ++k) {
        const Matrix& cov = config.regimes[k].covariance;
        if (cov.rows() != n_assets || cov.cols() != n_assets) {
            throw Error(ErrorKind::InvalidConfig, "regime " + std::to_string(k) + " covariance is not " +
                                                      std::to_string(n_assets) + "x" + std::to_string(n_assets));
        }
        Eigen::LLT<Matrix> llt(cov);
        if (!is_symmetric(cov) || llt.info() != Eigen::Success) {
            throw Error(ErrorKind::InvalidConfig, "regime " + std::to_string(k) + " covariance is not SPD");
        }
        factors.push_back(llt.matrixL());
    }
    const auto schedule = regime_schedule(n_rows, config);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ReturnsPanel out;
    out.values.resize(n_rows, n_assets);
    Vector z(n_assets);
    for (Index r = 0; r < n_rows; ++r) {
        for (Index c = 0; c < n_assets; ++c) z(c) = normal(rng);
        out.values.row(r) = (factors[static_cast<std::size_t>(schedule[static_cast<std::size_t>(r)])] * z).transpose();
    }

    std::chrono::sys_days day{config.start_date};
    for (Index r = 0; r < n_rows; ++r) {
        while (std::chrono::weekday{day}.iso_encoding() > 5) day += std::chrono::days{1};
        out.dates.emplace_back(day);
        day += std::chrono::days{1};
    }
    for (Index c = 0; c < n_assets; ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "A%02ld", static_cast<long>(c));
        out.tickers.emplace_back(name);
    }
    return out;
}

}  // namespace mvdfl
