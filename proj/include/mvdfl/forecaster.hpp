#pragma once

/**
 * @file forecaster.hpp
 * @brief DLinear-style covariance forecaster with an L L' head.
 *
 * Input window x (delta_in x N) is split per asset into a moving-average trend
 * and a residual. Two linear maps delta_in -> hidden, shared across assets,
 * are applied to the trend and residual and summed. The N hidden vectors are
 * concatenated (N * hidden) and a dense head produces the M = N(N+1)/2
 * entries of a lower-triangular L, filled row-major (L00, L10, L11, L20, ...).
 * The forecast is S = L L'.
 *
 * All parameters live in one contiguous vector so the optimizer and the
 * checkpoint format can treat them uniformly; the accessors return Eigen maps
 * into that storage.
 */

#include <cstdint>
#include <filesystem>

#include <Eigen/Dense>

namespace mvdfl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

inline constexpr Index kDefaultHidden = 128;

/// max{5, min{floor(delta_in / 3), 50}}.
Index kernel_size_for(Index delta_in);

struct ForecasterShape {
    Index n_assets = 0;
    Index input_len = 0;
    Index hidden = kDefaultHidden;
    Index kernel = 5;

    Index n_outputs() const { return n_assets * (n_assets + 1) / 2; }
    Index n_parameters() const;

    bool operator==(const ForecasterShape&) const = default;
};

class ForecasterParams {
public:
    using MatMap = Eigen::Map<Matrix>;
    using ConstMatMap = Eigen::Map<const Matrix>;
    using VecMap = Eigen::Map<Vector>;
    using ConstVecMap = Eigen::Map<const Vector>;

    ForecasterParams() = default;
    /// Zero-initialized parameters of the given shape.
    explicit ForecasterParams(const ForecasterShape& shape);

    const ForecasterShape& shape() const { return shape_; }

    Vector& data() { return data_; }
    const Vector& data() const { return data_; }

    MatMap trend_weight();
    ConstMatMap trend_weight() const;
    VecMap trend_bias();
    ConstVecMap trend_bias() const;
    MatMap residual_weight();
    ConstMatMap residual_weight() const;
    VecMap residual_bias();
    ConstVecMap residual_bias() const;
    MatMap head_weight();
    ConstMatMap head_weight() const;
    VecMap head_bias();
    ConstVecMap head_bias() const;

private:
    struct Offsets {
        Index trend_w, trend_b, resid_w, resid_b, head_w, head_b, total;
    };
    Offsets offsets() const;

    ForecasterShape shape_;
    Vector data_;
};

struct Decomposition {
    Matrix trend;
    Matrix residual;
};

/// Centered moving average along time with edge replication; for an even
/// kernel the extra padding row goes to the end.
Decomposition decompose(const Matrix& x, Index kernel);

struct ForwardCache {
    Decomposition parts;
    Vector features;  // N * hidden, asset-major
    Matrix lower;     // L
};

struct ForwardResult {
    Matrix sigma;  // L L'
    Matrix lower;
    ForwardCache cache;
};

ForwardResult forward(const ForecasterParams& params, const Matrix& x);

/// Parameter gradient for upstream dLoss/dS. Only the symmetric part of
/// `upstream` matters: dL = (G + G') L.
ForecasterParams backward(const ForecasterParams& params, const ForwardCache& cache, const Matrix& upstream);

inline constexpr double kDefaultHeadGain = 0.1;

/// Map weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); head weights the same
/// times `head_gain`; biases zero except the head bias, which puts
/// `init_scale` on the diagonal of L.
///
/// With unit head gain the input-driven part of L is as large as its
/// diagonal and the first GMVP solves are near singular.
ForecasterParams init_params(std::uint64_t seed, Index delta_in, Index n_assets, Index hidden, double init_scale,
                             double head_gain = kDefaultHeadGain);

void save_checkpoint(const ForecasterParams& params, const std::filesystem::path& path);
/// Throws State on bad magic, version, size or checksum.
ForecasterParams load_checkpoint(const std::filesystem::path& path);

/// Flat index of L(row, col), col <= row.
inline Index lower_index(Index row, Index col) { return row * (row + 1) / 2 + col; }

}  // namespace mvdfl
