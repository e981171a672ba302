#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proxyset/cluster.hpp"
#include "proxyset/corpus.hpp"
#include "proxyset/stats.hpp"

namespace proxyset {

/// Domain-gap term of the sampling score. `mmd` swaps FID for squared MMD.
enum class GapMetric { fid, mmd };

std::string to_string(GapMetric metric);
GapMetric parse_gap_metric(const std::string& name);

struct SearchParams {
    double lambda = 0.6;
    std::size_t k = 20;
    std::size_t n_identities = 500;
    std::uint64_t seed = 0;
    bool camera_aware = false;
    std::size_t max_iters = kDefaultMaxIters;
    GapMetric metric = GapMetric::fid;
    double mmd_bandwidth = 0.0;  // <= 0 selects the median heuristic

    void validate() const;
};

struct DistanceOptions {
    GapMetric metric = GapMetric::fid;
    double mmd_bandwidth = 0.0;
    std::uint64_t seed = 0;  // median-heuristic subsample
};

/// Per-cluster sampling scores: w = lambda softmax(-gap) + (1 - lambda) softmax(-v_gap).
struct ClusterScores {
    double lambda = 0.0;
    std::vector<DistancePair> distances;
    std::vector<double> weights;
    std::vector<std::size_t> id_counts;      // |S_k|; empty until attached
    std::vector<double> identity_weights;    // w_k / |S_k| (0 for empty clusters)
};

/// Softmax of the negated values, computed with max subtraction.
std::vector<double> softmax_negated(std::span<const double> values);

/// Image-level distances of every cluster subset to the target rows. Subsets and
/// the target need at least two images. Rank-deficient covariances (fewer rows
/// than dims + 1) are tolerated and noted in `warnings` when given.
std::vector<DistancePair> cluster_distances(const ClusterSubsets& subsets, const FeaturePool& pool,
                                            const MatrixView& target, const DistanceOptions& options = {},
                                            std::vector<std::string>* warnings = nullptr);
std::vector<DistancePair> cluster_distances(const ClusterSubsets& subsets, const FeaturePool& pool,
                                            const FeaturePool& target, const DistanceOptions& options = {},
                                            std::vector<std::string>* warnings = nullptr);

ClusterScores sampling_scores(std::span<const DistancePair> pairs, double lambda);
/// As above, also filling id_counts and identity_weights from the subsets.
ClusterScores sampling_scores(std::span<const DistancePair> pairs, double lambda, const ClusterSubsets& subsets);

/// One search pass: a full sampling run against the whole target or one camera slice.
struct SearchPass {
    std::optional<int> camera;
    std::uint64_t seed = 0;
    std::size_t target_rows = 0;
    ClusterScores scores;
    std::vector<std::string> sampled;  // identity keys in draw order
    std::vector<std::string> warnings;
};

struct ProxySet {
    std::vector<std::string> identity_ids;  // distinct keys, first-draw order across passes
    std::vector<std::size_t> rows;          // pool rows of every image of a sampled identity, ascending
    std::vector<ImageRecord> records;       // aligned with rows
    SearchParams params;
    std::vector<SearchPass> passes;
};

/// Draws n distinct identities without replacement, identity i weighted by
/// w_k / |S_k| of its cluster, renormalizing after every draw. Includes all images
/// of each drawn identity.
ProxySet sample_proxy(const FeaturePool& pool, const ClusterSubsets& subsets, const ClusterScores& scores,
                      std::size_t n_identities, std::uint64_t seed);

/// Pool-side state shared by every pass and every (lambda, N) setting.
struct SearchContext {
    IdFeatureTable ids;
    ClusterModel model;
    ClusterSubsets subsets;
};

SearchContext prepare_search(const FeaturePool& pool, std::size_t k, std::uint64_t seed,
                             std::size_t max_iters = kDefaultMaxIters);

/// Cluster, score and sample. Dispatches to camera_aware_search when params.camera_aware.
ProxySet search_proxy(const FeaturePool& pool, const FeaturePool& target, const SearchParams& params);
ProxySet search_proxy(const SearchContext& context, const FeaturePool& pool, const FeaturePool& target,
                      const SearchParams& params);

/// One pass per target camera (ascending camera id, pass p seeded with seed + p);
/// passes are unioned keeping one copy of every identity.
ProxySet camera_aware_search(const FeaturePool& pool, const FeaturePool& target, const SearchParams& params);
ProxySet camera_aware_search(const SearchContext& context, const FeaturePool& pool, const FeaturePool& target,
                             const SearchParams& params);

struct DatasetShare {
    std::string dataset;
    std::size_t identities = 0;
    std::size_t images = 0;
    double identity_fraction = 0.0;
    double image_fraction = 0.0;
};

std::vector<DatasetShare> composition(const ProxySet& proxy, const FeaturePool& pool);

/// One JSON object per proxy image, in `records` order. The reader skips
/// header objects carrying a "provenance" key.
std::string proxy_jsonl(const ProxySet& proxy);
std::vector<ImageRecord> read_proxy_jsonl(const std::filesystem::path& path);

/// Parameters, per-pass cluster scores and dataset composition.
std::string proxy_summary_json(const ProxySet& proxy, const FeaturePool& pool);

}  // namespace proxyset
