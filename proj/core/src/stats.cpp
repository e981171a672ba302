#include "proxyset/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <utility>

#include <Eigen/Eigenvalues>

namespace proxyset {
namespace {

constexpr double kSymmetryTolerance = 1e-6;
constexpr double kRelativeEigenClamp = 1e-8;

void require_rows(const MatrixView& x, Eigen::Index min_rows, const char* op) {
    if (x.rows() < min_rows) {
        throw ValidationError(std::string(op) + ": need at least " + std::to_string(min_rows) + " rows, got " +
                              std::to_string(x.rows()));
    }
}

void require_same_dims(Eigen::Index a, Eigen::Index b, const char* op) {
    if (a != b) {
        throw ValidationError(std::string(op) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                              std::to_string(b) + ")");
    }
}

double squared_distance(const MatrixView& a, Eigen::Index i, const MatrixView& b, Eigen::Index j) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double d = a(i, c) - b(j, c);
        s += d * d;
    }
    return s;
}

}  // namespace

GaussianSummary summarize(const MatrixView& features) {
    require_rows(features, 2, "summarize");
    const auto n = features.rows();
    GaussianSummary s;
    s.count = static_cast<std::size_t>(n);
    s.mean = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - s.mean.transpose();
    s.covariance = Eigen::MatrixXd::Zero(features.cols(), features.cols());
    s.covariance.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
    s.covariance.triangularView<Eigen::StrictlyUpper>() = s.covariance.transpose();
    s.covariance /= static_cast<double>(n - 1);
    if (!s.covariance.allFinite()) throw NumericalError("summarize: non-finite covariance");
    return s;
}

namespace {

void require_symmetric(const Eigen::MatrixXd& m, const char* op) {
    if (m.rows() != m.cols()) throw ValidationError(std::string(op) + ": matrix is not square");
    if (!m.allFinite()) throw ValidationError(std::string(op) + ": non-finite entries");
    if (m.size() == 0) return;
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTolerance * scale) {
        throw ValidationError(std::string(op) + ": matrix is not symmetric");
    }
}

/// Square roots of the eigenvalues, in place.
void root_eigenvalues(Eigen::VectorXd& values, const char* op) {
    // Round-off can push null-space eigenvalues slightly negative; anything below
    // the relative floor is treated as exactly zero.
    const double floor = -kRelativeEigenClamp * std::max(values.maxCoeff(), 0.0);
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values(i) < floor) throw NumericalError(std::string(op) + ": matrix is not positive semidefinite");
        values(i) = values(i) <= 0.0 ? 0.0 : std::sqrt(values(i));
    }
}

}  // namespace

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m) {
    require_symmetric(m, "sqrtm_psd");
    if (m.rows() == 0) return m;

    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) throw NumericalError("sqrtm_psd: eigendecomposition failed");

    Eigen::VectorXd values = eig.eigenvalues();
    root_eigenvalues(values, "sqrtm_psd");
    const Eigen::MatrixXd& v = eig.eigenvectors();
    Eigen::MatrixXd root = v * values.asDiagonal() * v.transpose();
    return 0.5 * (root + root.transpose());
}

double trace_sqrtm_psd(const Eigen::MatrixXd& m) {
    require_symmetric(m, "trace_sqrtm_psd");
    if (m.rows() == 0) return 0.0;
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success) throw NumericalError("trace_sqrtm_psd: eigendecomposition failed");
    Eigen::VectorXd values = eig.eigenvalues();
    root_eigenvalues(values, "trace_sqrtm_psd");
    return values.sum();
}

FidReference::FidReference(GaussianSummary s)
    : summary(std::move(s)), covariance_root(sqrtm_psd(summary.covariance)),
      covariance_trace(summary.covariance.trace()) {}

double fid(const FidReference& a, const GaussianSummary& b) {
    require_same_dims(a.summary.mean.size(), b.mean.size(), "fid");
    Eigen::MatrixXd inner = a.covariance_root * b.covariance * a.covariance_root;
    inner = 0.5 * (inner + inner.transpose());
    const double cross = trace_sqrtm_psd(inner);
    const double value =
        (a.summary.mean - b.mean).squaredNorm() + a.covariance_trace + b.covariance.trace() - 2.0 * cross;
    if (!std::isfinite(value)) throw NumericalError("fid: non-finite result");
    return std::max(value, 0.0);
}

double fid(const GaussianSummary& a, const GaussianSummary& b) {
    require_same_dims(a.mean.size(), b.mean.size(), "fid");
    return fid(FidReference(a), b);
}

double scalar_variance(const MatrixView& features) {
    require_rows(features, 2, "scalar_variance");
    const auto n = features.rows();
    double total = 0.0;
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
        double mean = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) mean += features(r, c);
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (Eigen::Index r = 0; r < n; ++r) {
            const double d = features(r, c) - mean;
            ss += d * d;
        }
        total += ss / static_cast<double>(n - 1);
    }
    return total / static_cast<double>(features.cols());
}

double v_gap(const MatrixView& p, const MatrixView& t) {
    require_same_dims(p.cols(), t.cols(), "v_gap");
    return std::abs(scalar_variance(p) - scalar_variance(t));
}

double mmd2(const MatrixView& p, const MatrixView& t, double bandwidth) {
    require_same_dims(p.cols(), t.cols(), "mmd2");
    require_rows(p, 2, "mmd2");
    require_rows(t, 2, "mmd2");
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) {
        throw ValidationError("mmd2: bandwidth must be positive");
    }
    const double gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    const auto m = p.rows();
    const auto n = t.rows();

    double kpp = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j)
            if (i != j) kpp += std::exp(-gamma * squared_distance(p, i, p, j));
    double ktt = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (i != j) ktt += std::exp(-gamma * squared_distance(t, i, t, j));
    // Equal sizes: paired U-statistic, which also drops i == j from the cross
    // term, so a set compared with itself scores exactly zero.
    const bool paired = m == n;
    double kpt = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            if (!paired || i != j) kpt += std::exp(-gamma * squared_distance(p, i, t, j));

    const double md = static_cast<double>(m);
    const double nd = static_cast<double>(n);
    const double cross = paired ? md * (md - 1.0) : md * nd;
    return kpp / (md * (md - 1.0)) + ktt / (nd * (nd - 1.0)) - 2.0 * kpt / cross;
}

double median_bandwidth(const MatrixView& p, const MatrixView& t, std::uint64_t seed, std::size_t max_rows) {
    require_same_dims(p.cols(), t.cols(), "median_bandwidth");
    const auto total = static_cast<std::size_t>(p.rows() + t.rows());
    if (total < 2) throw ValidationError("median_bandwidth: need at least 2 rows");

    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (total > max_rows) {
        std::mt19937_64 rng(seed);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(max_rows);
        std::sort(idx.begin(), idx.end());
    }
    const auto row = [&](std::size_t i) {
        return i < static_cast<std::size_t>(p.rows()) ? p.row(static_cast<Eigen::Index>(i))
                                                      : t.row(static_cast<Eigen::Index>(i - p.rows()));
    };

    std::vector<double> dists;
    dists.reserve(idx.size() * (idx.size() - 1) / 2);
    for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t b = a + 1; b < idx.size(); ++b) dists.push_back((row(idx[a]) - row(idx[b])).norm());

    const auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    double median = *mid;
    if (dists.size() % 2 == 0) {
        median = 0.5 * (median + *std::max_element(dists.begin(), mid));
    }
    if (!(median > 0.0)) throw NumericalError("median_bandwidth: all points coincide");
    return median;
}

}  // namespace proxyset
