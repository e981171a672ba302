#pragma once

#include <cstddef>
#include <cstdint>

#include <Eigen/Core>

#include "proxyset/types.hpp"

namespace proxyset {

/// Mean and unbiased (n-1) covariance of a feature set.
struct GaussianSummary {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    std::size_t count = 0;

    std::size_t dims() const noexcept { return static_cast<std::size_t>(mean.size()); }
};

/// Distances of one image set to the target. Under the MMD variant `fid` carries MMD^2.
struct DistancePair {
    double fid = 0.0;
    double v_gap = 0.0;
};

GaussianSummary summarize(const MatrixView& features);

/// Principal square root of a symmetric PSD matrix via eigendecomposition.
/// Eigenvalues in [-1e-8 * max eigenvalue, 0] are treated as zero; anything
/// more negative throws NumericalError.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd& m);

/// tr(m^1/2) from eigenvalues alone, with the same clamping as sqrtm_psd.
double trace_sqrtm_psd(const Eigen::MatrixXd& m);

/// One side of an FID with its covariance root precomputed, for repeated
/// comparisons against a fixed target.
struct FidReference {
    explicit FidReference(GaussianSummary s);

    GaussianSummary summary;
    Eigen::MatrixXd covariance_root;
    double covariance_trace = 0.0;
};

/// Frechet distance between Gaussians:
///   |mu_a - mu_b|^2 + tr(S_a) + tr(S_b) - 2 tr((S_a^1/2 S_b S_a^1/2)^1/2)
/// clamped at zero.
double fid(const GaussianSummary& a, const GaussianSummary& b);
double fid(const FidReference& a, const GaussianSummary& b);

/// Mean per-dimension sample variance, i.e. tr(cov) / dims.
double scalar_variance(const MatrixView& features);

/// |v(p) - v(t)|.
double v_gap(const MatrixView& p, const MatrixView& t);

/// Unbiased squared MMD with a Gaussian kernel exp(-|x-y|^2 / (2 bandwidth^2)).
/// Equal-size sets use the paired estimator (cross term over i != j); otherwise
/// the cross term averages all m*n pairs. Can be slightly negative.
double mmd2(const MatrixView& p, const MatrixView& t, double bandwidth);

/// Median pairwise Euclidean distance over the union of both sets, on a seeded
/// subsample of at most `max_rows` rows.
double median_bandwidth(const MatrixView& p, const MatrixView& t, std::uint64_t seed,
                        std::size_t max_rows = 2000);

}  // namespace proxyset
