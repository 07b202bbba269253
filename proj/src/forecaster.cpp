#include "mvdfl/forecaster.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "mvdfl/error.hpp"

namespace mvdfl {

namespace {

constexpr std::array<char, 8> kMagic{'M', 'V', 'D', 'F', 'L', 'C', 'K', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

std::uint64_t fnv1a(const void* bytes, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t i = 0; i < size; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

template <class T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw Error(ErrorKind::State, "corrupted checkpoint: truncated header");
    return value;
}

}  // namespace

Index kernel_size_for(Index delta_in) { return std::max<Index>(5, std::min<Index>(delta_in / 3, 50)); }

Index ForecasterShape::n_parameters() const {
    return 2 * (hidden * input_len + hidden) + n_outputs() * (n_assets * hidden) + n_outputs();
}

ForecasterParams::ForecasterParams(const ForecasterShape& shape)
    : shape_(shape), data_(Vector::Zero(shape.n_parameters())) {
    if (shape.n_assets < 1 || shape.input_len < 1 || shape.hidden < 1 || shape.kernel < 1) {
        throw Error(ErrorKind::InvalidConfig, "forecaster dimensions must be positive");
    }
}

ForecasterParams::Offsets ForecasterParams::offsets() const {
    const Index h = shape_.hidden;
    const Index d = shape_.input_len;
    Offsets o{};
    o.trend_w = 0;
    o.trend_b = o.trend_w + h * d;
    o.resid_w = o.trend_b + h;
    o.resid_b = o.resid_w + h * d;
    o.head_w = o.resid_b + h;
    o.head_b = o.head_w + shape_.n_outputs() * shape_.n_assets * h;
    o.total = o.head_b + shape_.n_outputs();
    return o;
}

ForecasterParams::MatMap ForecasterParams::trend_weight() {
    return {data_.data() + offsets().trend_w, shape_.hidden, shape_.input_len};
}
ForecasterParams::ConstMatMap ForecasterParams::trend_weight() const {
    return {data_.data() + offsets().trend_w, shape_.hidden, shape_.input_len};
}
ForecasterParams::VecMap ForecasterParams::trend_bias() { return {data_.data() + offsets().trend_b, shape_.hidden}; }
ForecasterParams::ConstVecMap ForecasterParams::trend_bias() const {
    return {data_.data() + offsets().trend_b, shape_.hidden};
}
ForecasterParams::MatMap ForecasterParams::residual_weight() {
    return {data_.data() + offsets().resid_w, shape_.hidden, shape_.input_len};
}
ForecasterParams::ConstMatMap ForecasterParams::residual_weight() const {
    return {data_.data() + offsets().resid_w, shape_.hidden, shape_.input_len};
}
ForecasterParams::VecMap ForecasterParams::residual_bias() {
    return {data_.data() + offsets().resid_b, shape_.hidden};
}
ForecasterParams::ConstVecMap ForecasterParams::residual_bias() const {
    return {data_.data() + offsets().resid_b, shape_.hidden};
}
ForecasterParams::MatMap ForecasterParams::head_weight() {
    return {data_.data() + offsets().head_w, shape_.n_outputs(), shape_.n_assets * shape_.hidden};
}
ForecasterParams::ConstMatMap ForecasterParams::head_weight() const {
    return {data_.data() + offsets().head_w, shape_.n_outputs(), shape_.n_assets * shape_.hidden};
}
ForecasterParams::VecMap ForecasterParams::head_bias() {
    return {data_.data() + offsets().head_b, shape_.n_outputs()};
}
ForecasterParams::ConstVecMap ForecasterParams::head_bias() const {
    return {data_.data() + offsets().head_b, shape_.n_outputs()};
}

Decomposition decompose(const Matrix& x, Index kernel) {
    const Index len = x.rows();
    if (kernel < 1 || kernel > len) {
        throw Error(ErrorKind::InvalidConfig, "moving-average kernel " + std::to_string(kernel) +
                                                  " incompatible with window length " + std::to_string(len));
    }
    const Index front = (kernel - 1) / 2;
    Decomposition out;
    out.trend.resize(len, x.cols());
    for (Index c = 0; c < x.cols(); ++c) {
        for (Index t = 0; t < len; ++t) {
            double acc = 0.0;
            for (Index k = 0; k < kernel; ++k) {
                const Index src = std::clamp<Index>(t - front + k, 0, len - 1);
                acc += x(src, c);
            }
            out.trend(t, c) = acc / static_cast<double>(kernel);
        }
    }
    out.residual = x - out.trend;
    return out;
}

ForwardResult forward(const ForecasterParams& params, const Matrix& x) {
    const auto& shape = params.shape();
    if (x.rows() != shape.input_len || x.cols() != shape.n_assets) {
        throw Error(ErrorKind::Shape, "input window is " + std::to_string(x.rows()) + "x" +
                                          std::to_string(x.cols()) + ", model expects " +
                                          std::to_string(shape.input_len) + "x" + std::to_string(shape.n_assets));
    }
    ForwardResult out;
    out.cache.parts = decompose(x, shape.kernel);

    // hidden x N; column i is asset i's feature vector.
    Matrix feat = params.trend_weight() * out.cache.parts.trend + params.residual_weight() * out.cache.parts.residual;
    feat.colwise() += params.trend_bias() + params.residual_bias();
    out.cache.features = Eigen::Map<const Vector>(feat.data(), feat.size());

    const Vector raw = params.head_weight() * out.cache.features + params.head_bias();
    const Index n = shape.n_assets;
    out.lower = Matrix::Zero(n, n);
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c <= r; ++c) out.lower(r, c) = raw(lower_index(r, c));
    }
    out.cache.lower = out.lower;
    out.sigma = out.lower * out.lower.transpose();
    return out;
}

ForecasterParams backward(const ForecasterParams& params, const ForwardCache& cache, const Matrix& upstream) {
    const auto& shape = params.shape();
    const Index n = shape.n_assets;
    if (cache.lower.rows() != n || cache.features.size() != n * shape.hidden ||
        cache.parts.trend.rows() != shape.input_len || cache.parts.trend.cols() != n) {
        throw Error(ErrorKind::State, "forward cache does not match parameters");
    }
    if (upstream.rows() != n || upstream.cols() != n) {
        throw Error(ErrorKind::Shape, "upstream gradient must be N x N");
    }

    const Matrix grad_lower = (upstream + upstream.transpose()) * cache.lower;
    Vector grad_raw(shape.n_outputs());
    for (Index r = 0; r < n; ++r) {
        for (Index c = 0; c <= r; ++c) grad_raw(lower_index(r, c)) = grad_lower(r, c);
    }

    ForecasterParams grad(shape);
    grad.head_weight().noalias() = grad_raw * cache.features.transpose();
    grad.head_bias() = grad_raw;

    const Vector grad_features = params.head_weight().transpose() * grad_raw;
    const Eigen::Map<const Matrix> grad_feat(grad_features.data(), shape.hidden, n);
    grad.trend_weight().noalias() = grad_feat * cache.parts.trend.transpose();
    grad.residual_weight().noalias() = grad_feat * cache.parts.residual.transpose();
    const Vector bias_grad = grad_feat.rowwise().sum();
    grad.trend_bias() = bias_grad;
    grad.residual_bias() = bias_grad;
    return grad;
}

ForecasterParams init_params(std::uint64_t seed, Index delta_in, Index n_assets, Index hidden, double init_scale,
                             double head_gain) {
    ForecasterShape shape{n_assets, delta_in, hidden, kernel_size_for(delta_in)};
    ForecasterParams params(shape);
    std::mt19937_64 rng(seed);

    const double map_bound = 1.0 / std::sqrt(static_cast<double>(delta_in));
    std::uniform_real_distribution<double> map_dist(-map_bound, map_bound);
    auto fill = [&](auto&& block, std::uniform_real_distribution<double>& dist) {
        for (Index j = 0; j < block.cols(); ++j) {
            for (Index i = 0; i < block.rows(); ++i) block(i, j) = dist(rng);
        }
    };
    fill(params.trend_weight(), map_dist);
    fill(params.residual_weight(), map_dist);

    const double head_bound = head_gain / std::sqrt(static_cast<double>(n_assets * hidden));
    std::uniform_real_distribution<double> head_dist(-head_bound, head_bound);
    fill(params.head_weight(), head_dist);

    for (Index r = 0; r < n_assets; ++r) params.head_bias()(lower_index(r, r)) = init_scale;
    return params;
}

void save_checkpoint(const ForecasterParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    const auto& s = params.shape();
    out.write(kMagic.data(), kMagic.size());
    write_pod(out, kCheckpointVersion);
    for (Index v : {s.n_assets, s.input_len, s.hidden, s.kernel}) write_pod(out, static_cast<std::uint64_t>(v));
    const auto count = static_cast<std::uint64_t>(params.data().size());
    write_pod(out, count);
    const std::size_t bytes = static_cast<std::size_t>(count) * sizeof(double);
    out.write(reinterpret_cast<const char*>(params.data().data()), static_cast<std::streamsize>(bytes));
    write_pod(out, fnv1a(params.data().data(), bytes));
    if (!out) throw Error(ErrorKind::Io, "failed writing " + path.string());
}

ForecasterParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw Error(ErrorKind::State, "corrupted checkpoint: bad magic in " + path.string());
    if (read_pod<std::uint32_t>(in) != kCheckpointVersion) {
        throw Error(ErrorKind::State, "unsupported checkpoint version in " + path.string());
    }
    ForecasterShape shape;
    shape.n_assets = static_cast<Index>(read_pod<std::uint64_t>(in));
    shape.input_len = static_cast<Index>(read_pod<std::uint64_t>(in));
    shape.hidden = static_cast<Index>(read_pod<std::uint64_t>(in));
    shape.kernel = static_cast<Index>(read_pod<std::uint64_t>(in));
    const auto count = read_pod<std::uint64_t>(in);
    if (shape.n_assets < 1 || shape.n_assets > 100000 || shape.input_len < 1 || shape.hidden < 1 ||
        shape.kernel < 1 || count != static_cast<std::uint64_t>(shape.n_parameters())) {
        throw Error(ErrorKind::State, "corrupted checkpoint: inconsistent shape in " + path.string());
    }
    ForecasterParams params(shape);
    const std::size_t bytes = static_cast<std::size_t>(count) * sizeof(double);
    in.read(reinterpret_cast<char*>(params.data().data()), static_cast<std::streamsize>(bytes));
    if (!in) throw Error(ErrorKind::State, "corrupted checkpoint: truncated payload in " + path.string());
    const auto checksum = read_pod<std::uint64_t>(in);
    if (checksum != fnv1a(params.data().data(), bytes)) {
        throw Error(ErrorKind::State, "corrupted checkpoint: checksum mismatch in " + path.string());
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw Error(ErrorKind::State, "corrupted checkpoint: trailing bytes in " + path.string());
    }
    return params;
}

}  // namespace mvdfl
