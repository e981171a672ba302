#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "proxyset/corpus.hpp"
#include "proxyset/types.hpp"

namespace proxyset {

inline constexpr std::size_t kDefaultMaxIters = 300;

struct ClusterModel {
    std::size_t k = 0;
    Matrix centroids;                        // k x dims
    std::vector<std::string> identity_ids;   // same order as the IdFeatureTable
    std::vector<std::size_t> labels;         // labels[i] is the cluster of identity_ids[i]
    double inertia = 0.0;
    std::uint64_t seed = 0;
    std::size_t iterations_run = 0;
    bool converged = false;
    std::vector<double> inertia_history;     // objective after each assignment step
    std::size_t empty_repairs = 0;

    std::optional<std::size_t> cluster_of(const std::string& identity) const;

private:
    friend ClusterModel kmeans(const IdFeatureTable&, std::size_t, std::uint64_t, std::size_t);
    std::unordered_map<std::string, std::size_t> index_;
};

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. Squared Euclidean distance; ties go to the
/// lowest cluster index. Deterministic in (table order, k, seed).
ClusterModel kmeans(const IdFeatureTable& ids, std::size_t k, std::uint64_t seed,
                    std::size_t max_iters = kDefaultMaxIters);

struct ClusterSubset {
    std::vector<std::string> identity_ids;
    std::vector<std::size_t> image_rows;  // pool rows, ascending

    std::size_t id_count() const noexcept { return identity_ids.size(); }
};

struct ClusterSubsets {
    std::vector<ClusterSubset> clusters;

    std::size_t total_identities() const noexcept;
};

ClusterSubsets materialize_subsets(const FeaturePool& pool, const ClusterModel& model);

/// Audit dump; centroids are omitted when dims > 64.
std::string cluster_model_json(const ClusterModel& model);

}  // namespace proxyset
