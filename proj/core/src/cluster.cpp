#include "proxyset/cluster.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include <json.hpp>

namespace proxyset {
namespace {

double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
    double s = 0.0;
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double d = a(i, c) - b(j, c);
        s += d * d;
    }
    return s;
}

Matrix seed_plus_plus(const Matrix& points, std::size_t k, std::mt19937_64& rng) {
    const auto n = static_cast<std::size_t>(points.rows());
    Matrix centroids(static_cast<Eigen::Index>(k), points.cols());
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto first = static_cast<std::size_t>(unit(rng) * static_cast<double>(n));
    first = std::min(first, n - 1);
    centroids.row(0) = points.row(static_cast<Eigen::Index>(first));

    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    for (std::size_t c = 1; c < k; ++c) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            nearest[i] = std::min(nearest[i], squared_distance(points, static_cast<Eigen::Index>(i), centroids,
                                                               static_cast<Eigen::Index>(c - 1)));
            total += nearest[i];
        }
        std::size_t pick = n - 1;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                acc += nearest[i];
                if (acc > target && nearest[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
        } else {
            // every point coincides with an existing centroid
            pick = std::min(static_cast<std::size_t>(unit(rng) * static_cast<double>(n)), n - 1);
        }
        centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    }
    return centroids;
}

// Returns the objective of the assignment against the given centroids.
double assign(const Matrix& points, const Matrix& centroids, std::vector<std::size_t>& labels,
              std::vector<double>& cost) {
    double inertia = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
            const double d = squared_distance(points, i, centroids, c);
            if (d < best_d) {
                best_d = d;
                best = static_cast<std::size_t>(c);
            }
        }
        labels[static_cast<std::size_t>(i)] = best;
        cost[static_cast<std::size_t>(i)] = best_d;
        inertia += best_d;
    }
    return inertia;
}

// Moves the point farthest from its centroid into each empty cluster. Only points
// whose cluster keeps at least one other member are eligible.
std::size_t repair_empty(std::vector<std::size_t>& labels, std::vector<double>& cost, std::size_t k) {
    std::size_t repairs = 0;
    std::vector<std::size_t> sizes(k, 0);
    for (auto l : labels) ++sizes[l];
    for (std::size_t c = 0; c < k; ++c) {
        if (sizes[c] != 0) continue;
        std::optional<std::size_t> far;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (sizes[labels[i]] < 2) continue;
            if (!far || cost[i] > cost[*far]) far = i;
        }
        if (!far) break;
        --sizes[labels[*far]];
        labels[*far] = c;
        cost[*far] = 0.0;
        sizes[c] = 1;
        ++repairs;
    }
    return repairs;
}

void update_centroids(const Matrix& points, const std::vector<std::size_t>& labels, Matrix& centroids) {
    Matrix sums = Matrix::Zero(centroids.rows(), centroids.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(centroids.rows()), 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sums.row(static_cast<Eigen::Index>(labels[i])) += points.row(static_cast<Eigen::Index>(i));
        ++counts[labels[i]];
    }
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
        if (counts[static_cast<std::size_t>(c)] > 0) {
            centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
        }
    }
}

}  // namespace

std::optional<std::size_t> ClusterModel::cluster_of(const std::string& identity) const {
    if (index_.empty() && !identity_ids.empty()) {
        for (std::size_t i = 0; i < identity_ids.size(); ++i) {
            if (identity_ids[i] == identity) return labels[i];
        }
        return std::nullopt;
    }
    const auto it = index_.find(identity);
    if (it == index_.end()) return std::nullopt;
    return labels[it->second];
}

ClusterModel kmeans(const IdFeatureTable& ids, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
    const auto n = static_cast<std::size_t>(ids.features.rows());
    if (n == 0) throw ValidationError("kmeans: empty identity table");
    if (k == 0) throw ValidationError("kmeans: k must be >= 1");
    if (k > n) {
        throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds identity count " + std::to_string(n));
    }
    if (max_iters == 0) throw ValidationError("kmeans: max_iters must be >= 1");

    const Matrix& points = ids.features;
    std::mt19937_64 rng(seed);

    ClusterModel model;
    model.k = k;
    model.seed = seed;
    model.identity_ids = ids.identity_ids;
    model.centroids = seed_plus_plus(points, k, rng);

    std::vector<std::size_t> labels(n, 0);
    std::vector<double> cost(n, 0.0);
    std::vector<std::size_t> previous;
    for (std::size_t it = 0; it < max_iters; ++it) {
        double inertia = assign(points, model.centroids, labels, cost);
        if (const auto repairs = repair_empty(labels, cost, k); repairs > 0) {
            model.empty_repairs += repairs;
            inertia = 0.0;
            for (double c : cost) inertia += c;
        }
        model.inertia_history.push_back(inertia);
        model.iterations_run = it + 1;
        if (labels == previous) {
            model.converged = true;
            break;
        }
        update_centroids(points, labels, model.centroids);
        previous = labels;
    }

    model.labels = std::move(labels);
    model.inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        model.inertia += squared_distance(points, static_cast<Eigen::Index>(i), model.centroids,
                                          static_cast<Eigen::Index>(model.labels[i]));
    }
    for (std::size_t i = 0; i < n; ++i) model.index_.emplace(model.identity_ids[i], i);
    return model;
}

std::size_t ClusterSubsets::total_identities() const noexcept {
    std::size_t total = 0;
    for (const auto& c : clusters) total += c.id_count();
    return total;
}

ClusterSubsets materialize_subsets(const FeaturePool& pool, const ClusterModel& model) {
    ClusterSubsets subsets;
    subsets.clusters.resize(model.k);
    std::unordered_map<std::string, std::size_t> cluster_by_id;
    for (std::size_t i = 0; i < pool.records.size(); ++i) {
        auto key = identity_key(pool.records[i]);
        auto it = cluster_by_id.find(key);
        if (it == cluster_by_id.end()) {
            const auto cluster = model.cluster_of(key);
            if (!cluster) throw ValidationError("materialize_subsets: identity not in cluster model: " + key);
            it = cluster_by_id.emplace(key, *cluster).first;
            subsets.clusters[*cluster].identity_ids.push_back(key);
        }
        subsets.clusters[it->second].image_rows.push_back(pool.records[i].row_index);
    }
    if (cluster_by_id.size() != model.identity_ids.size()) {
        throw ValidationError("materialize_subsets: cluster model covers identities absent from the pool");
    }
    for (auto& c : subsets.clusters) std::sort(c.image_rows.begin(), c.image_rows.end());
    return subsets;
}

std::string cluster_model_json(const ClusterModel& model) {
    nlohmann::json j;
    j["k"] = model.k;
    j["seed"] = model.seed;
    j["iterations_run"] = model.iterations_run;
    j["converged"] = model.converged;
    j["inertia"] = model.inertia;
    j["dims"] = model.centroids.cols();
    if (model.centroids.cols() <= 64) {
        auto& rows = j["centroids"] = nlohmann::json::array();
        for (Eigen::Index c = 0; c < model.centroids.rows(); ++c) {
            std::vector<double> row(model.centroids.row(c).begin(), model.centroids.row(c).end());
            rows.push_back(row);
        }
    }
    auto& assignment = j["assignment"] = nlohmann::json::object();
    for (std::size_t i = 0; i < model.identity_ids.size(); ++i) assignment[model.identity_ids[i]] = model.labels[i];
    return j.dump(2);
}

}  // namespace proxyset
