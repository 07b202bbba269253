#include "mvdfl/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvdfl/error.hpp"

namespace mvdfl {

bool Permutation::is_bijection() const {
    std::vector<bool> seen(order.size(), false);
    for (Index i : order) {
        if (i < 0 || static_cast<std::size_t>(i) >= order.size() || seen[static_cast<std::size_t>(i)]) return false;
        seen[static_cast<std::size_t>(i)] = true;
    }
    return true;
}

Permutation bbc_reorder(const Matrix& a) {
    const Index n = a.rows();
    if (a.cols() != n) throw Error(ErrorKind::Shape, "precision matrix must be square");
    if (n < 3) throw Error(ErrorKind::Shape, "block reordering needs N >= 3");

    std::vector<Index> pi(static_cast<std::size_t>(n), -1);
    std::vector<bool> placed(static_cast<std::size_t>(n), false);

    Index si = 0;
    Index sj = 1;
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            if (std::abs(a(i, j)) > std::abs(a(si, sj))) {
                si = i;
                sj = j;
            }
        }
    }
    pi[0] = si;
    pi[1] = sj;
    placed[static_cast<std::size_t>(si)] = placed[static_cast<std::size_t>(sj)] = true;

    // Antipodal anchor: weakest link to pi[0].
    Index anchor = -1;
    for (Index k = 0; k < n; ++k) {
        if (placed[static_cast<std::size_t>(k)]) continue;
        if (anchor < 0 || a(pi[0], k) < a(pi[0], anchor)) anchor = k;
    }
    pi[static_cast<std::size_t>(n - 1)] = anchor;
    placed[static_cast<std::size_t>(anchor)] = true;

    // argmax over unplaced k of the mean affinity to pi[first .. last).
    auto best_affinity = [&](Index first, Index last) {
        Index best = -1;
        double best_score = 0.0;
        for (Index k = 0; k < n; ++k) {
            if (placed[static_cast<std::size_t>(k)]) continue;
            double s = 0.0;
            for (Index i = first; i < last; ++i) s += a(k, pi[static_cast<std::size_t>(i)]);
            s /= static_cast<double>(last - first);
            if (best < 0 || s > best_score) {
                best = k;
                best_score = s;
            }
        }
        return best;
    };

    Index left = 2;
    Index right = n - 2;
    while (left <= right) {
        const Index m = best_affinity(0, left);
        pi[static_cast<std::size_t>(left)] = m;
        placed[static_cast<std::size_t>(m)] = true;
        ++left;
        if (left <= right) {
            const Index r = best_affinity(right + 1, n);
            pi[static_cast<std::size_t>(right)] = r;
            placed[static_cast<std::size_t>(r)] = true;
            --right;
        }
    }

    Permutation out;
    out.order = std::move(pi);
    out.block_starts = detect_blocks(a, out.order);
    return out;
}

std::vector<Index> detect_blocks(const Matrix& a, const std::vector<Index>& order) {
    const Index n = static_cast<Index>(order.size());
    std::vector<Index> starts{0};
    if (n < 3) return starts;
    const Matrix p = apply_permutation(a, order);
    auto leading_mean = [&](Index k) { return p.topLeftCorner(k, k).mean(); };
    Index boundary = 0;
    double largest_drop = 0.0;
    double prev = leading_mean(2);
    for (Index k = 3; k <= n; ++k) {
        const double cur = leading_mean(k);
        const double drop = prev - cur;
        if (drop > largest_drop) {
            largest_drop = drop;
            boundary = k - 1;
        }
        prev = cur;
    }
    if (boundary > 0) starts.push_back(boundary);
    return starts;
}

Matrix apply_permutation(const Matrix& m, const std::vector<Index>& order) {
    const Index n = static_cast<Index>(order.size());
    Matrix out(n, n);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            out(i, j) = m(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
    }
    return out;
}

AttributionReport attribution(const Vector& w, const Matrix& sigma) {
    const Index n = w.size();
    if (sigma.rows() != n || sigma.cols() != n) throw Error(ErrorKind::Shape, "weights and covariance differ in size");
    AttributionReport rep;
    for (Index i = 0; i < n; ++i) {
        rep.diagonal_term += w(i) * w(i) * sigma(i, i);
        for (Index j = 0; j < n; ++j) {
            if (i == j) continue;
            const double term = w(i) * w(j) * sigma(i, j);
            const bool pi = w(i) >= 0.0;
            const bool pj = w(j) >= 0.0;
            if (pi && pj) {
                rep.positive_region += term;
            } else if (!pi && !pj) {
                rep.negative_region += term;
            } else {
                rep.mixed_region += term;
            }
        }
    }
    rep.offdiag_term = rep.positive_region + rep.mixed_region + rep.negative_region;
    rep.order.resize(static_cast<std::size_t>(n));
    std::iota(rep.order.begin(), rep.order.end(), 0);
    std::stable_sort(rep.order.begin(), rep.order.end(), [&](Index x, Index y) { return w(x) > w(y); });
    rep.zero_crossing = (w.array() >= 0.0).count();
    return rep;
}

double volatility_rank_precision(const ReturnsPanel& train_panel, const Matrix& weights_history, Index k) {
    const Index n = train_panel.n_assets();
    if (weights_history.cols() != n) throw Error(ErrorKind::Shape, "weights history has the wrong asset count");
    if (k < 1 || k > n) throw Error(ErrorKind::InvalidConfig, "k must lie in [1, N]");
    if (weights_history.rows() == 0) throw Error(ErrorKind::InsufficientHistory, "empty weights history");
    if (train_panel.n_rows() < 2) throw Error(ErrorKind::InsufficientObservations, "training panel too short");

    const Matrix centered = train_panel.values.rowwise() - train_panel.values.colwise().mean();
    const Vector vol = (centered.colwise().squaredNorm().array() / static_cast<double>(train_panel.n_rows() - 1)).sqrt();

    std::vector<Index> by_vol(static_cast<std::size_t>(n));
    std::iota(by_vol.begin(), by_vol.end(), 0);
    std::stable_sort(by_vol.begin(), by_vol.end(), [&](Index x, Index y) { return vol(x) < vol(y); });
    std::vector<bool> low_vol(static_cast<std::size_t>(n), false);
    for (Index i = 0; i < k; ++i) low_vol[static_cast<std::size_t>(by_vol[static_cast<std::size_t>(i)])] = true;

    double total = 0.0;
    std::vector<Index> by_weight(static_cast<std::size_t>(n));
    for (Index r = 0; r < weights_history.rows(); ++r) {
        std::iota(by_weight.begin(), by_weight.end(), 0);
        std::stable_sort(by_weight.begin(), by_weight.end(),
                         [&](Index x, Index y) { return weights_history(r, x) > weights_history(r, y); });
        Index hits = 0;
        for (Index i = 0; i < k; ++i) hits += low_vol[static_cast<std::size_t>(by_weight[static_cast<std::size_t>(i)])];
        total += static_cast<double>(hits) / static_cast<double>(k);
    }
    return total / static_cast<double>(weights_history.rows());
}

double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw Error(ErrorKind::InsufficientHistory, "percentile of empty sample");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(pct, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

WeightEnvelope weight_distribution(const Matrix& history, double lower_pct, double upper_pct) {
    if (history.rows() == 0 || history.cols() == 0) throw Error(ErrorKind::InsufficientHistory, "empty weights history");
    if (!(0.0 <= lower_pct && lower_pct < upper_pct && upper_pct <= 100.0)) {
        throw Error(ErrorKind::InvalidConfig, "percentiles must satisfy 0 <= lower < upper <= 100");
    }
    const Index n = history.cols();
    WeightEnvelope env{Vector(n), Vector(n), Vector(n)};
    for (Index c = 0; c < n; ++c) {
        std::vector<double> v(history.col(c).data(), history.col(c).data() + history.rows());
        env.median(c) = percentile(v, 50.0);
        const double lo = percentile(v, lower_pct);
        const double hi = percentile(v, upper_pct);
        double kept_min = hi;
        double kept_max = lo;
        for (double x : v) {
            if (x >= lo && x <= hi) {
                kept_min = std::min(kept_min, x);
                kept_max = std::max(kept_max, x);
            }
        }
        env.lower(c) = kept_min;
        env.upper(c) = kept_max;
    }
    return env;
}

}  // namespace mvdfl
