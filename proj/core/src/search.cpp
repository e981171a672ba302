#include "proxyset/search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace proxyset {
namespace {

void note_rank_deficiency(std::vector<std::string>* warnings, const std::string& what, Eigen::Index rows,
                          Eigen::Index dims) {
    if (warnings && rows < dims + 1) {
        warnings->push_back(what + " has " + std::to_string(rows) + " rows for " + std::to_string(dims) +
                            " dims; covariance is rank-deficient");
    }
}

std::vector<std::size_t> target_camera_rows(const FeaturePool& target, int camera) {
    std::vector<std::size_t> rows;
    for (const auto& r : target.records) {
        if (r.camera_id == camera) rows.push_back(r.row_index);
    }
    return rows;
}

SearchPass run_pass(const SearchContext& context, const FeaturePool& pool, const MatrixView& target,
                    const SearchParams& params, std::optional<int> camera, std::uint64_t seed) {
    SearchPass pass;
    pass.camera = camera;
    pass.seed = seed;
    pass.target_rows = static_cast<std::size_t>(target.rows());
    const DistanceOptions options{params.metric, params.mmd_bandwidth, params.seed};
    const auto pairs = cluster_distances(context.subsets, pool, target, options, &pass.warnings);
    pass.scores = sampling_scores(pairs, params.lambda, context.subsets);
    auto drawn = sample_proxy(pool, context.subsets, pass.scores, params.n_identities, seed);
    pass.sampled = std::move(drawn.identity_ids);
    return pass;
}

ProxySet assemble(const FeaturePool& pool, const SearchParams& params, std::vector<SearchPass> passes) {
    ProxySet proxy;
    proxy.params = params;
    std::unordered_set<std::string> chosen;
    for (const auto& pass : passes) {
        for (const auto& id : pass.sampled) {
            if (chosen.insert(id).second) proxy.identity_ids.push_back(id);
        }
    }
    for (std::size_t i = 0; i < pool.records.size(); ++i) {
        if (chosen.contains(identity_key(pool.records[i]))) {
            proxy.rows.push_back(pool.records[i].row_index);
            proxy.records.push_back(pool.records[i]);
        }
    }
    proxy.passes = std::move(passes);
    return proxy;
}

nlohmann::json record_json(const ImageRecord& r) {
    nlohmann::json j;
    j["image_id"] = r.image_id;
    j["identity_id"] = r.identity_id;
    j["dataset_name"] = r.dataset_name;
    j["camera_id"] = r.camera_id ? nlohmann::json(*r.camera_id) : nlohmann::json(nullptr);
    j["row_index"] = r.row_index;
    return j;
}

}  // namespace

std::string to_string(GapMetric metric) { return metric == GapMetric::fid ? "fid" : "mmd"; }

GapMetric parse_gap_metric(const std::string& name) {
    if (name == "fid") return GapMetric::fid;
    if (name == "mmd") return GapMetric::mmd;
    throw ValidationError("unknown gap metric '" + name + "' (expected fid or mmd)");
}

void SearchParams::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
    if (k < 1) throw ValidationError("k must be >= 1");
    if (n_identities < 1) throw ValidationError("n_identities must be >= 1");
    if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
    if (!std::isfinite(mmd_bandwidth)) throw ValidationError("mmd_bandwidth must be finite");
}

std::vector<double> softmax_negated(std::span<const double> values) {
    if (values.empty()) throw ValidationError("softmax: empty input");
    double lowest = values[0];
    for (double v : values) {
        if (!std::isfinite(v)) throw ValidationError("softmax: non-finite distance");
        lowest = std::min(lowest, v);
    }
    std::vector<double> out(values.size());
    double total = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = std::exp(-(values[i] - lowest));
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

std::vector<DistancePair> cluster_distances(const ClusterSubsets& subsets, const FeaturePool& pool,
                                            const MatrixView& target, const DistanceOptions& options,
                                            std::vector<std::string>* warnings) {
    if (target.rows() < 2) throw ValidationError("cluster_distances: target needs at least 2 images");
    if (static_cast<std::size_t>(target.cols()) != pool.dims()) {
        throw ValidationError("cluster_distances: target dims " + std::to_string(target.cols()) +
                              " differ from pool dims " + std::to_string(pool.dims()));
    }
    note_rank_deficiency(warnings, "target", target.rows(), target.cols());

    std::optional<FidReference> target_reference;
    double bandwidth = options.mmd_bandwidth;
    if (options.metric == GapMetric::fid) {
        target_reference.emplace(summarize(target));
    } else if (!(bandwidth > 0.0)) {
        bandwidth = median_bandwidth(pool.matrix, target, options.seed);
    }
    const double target_variance = scalar_variance(target);

    std::vector<DistancePair> pairs;
    pairs.reserve(subsets.clusters.size());
    for (std::size_t k = 0; k < subsets.clusters.size(); ++k) {
        const auto& rows = subsets.clusters[k].image_rows;
        if (rows.size() < 2) {
            throw ValidationError("cluster_distances: undersized subset " + std::to_string(k) + " (" +
                                  std::to_string(rows.size()) + " images)");
        }
        const Matrix features = pool.gather(rows);
        note_rank_deficiency(warnings, "cluster " + std::to_string(k), features.rows(), features.cols());
        DistancePair pair;
        pair.fid = options.metric == GapMetric::fid ? fid(*target_reference, summarize(features))
                                                    : mmd2(features, target, bandwidth);
        pair.v_gap = std::abs(scalar_variance(features) - target_variance);
        pairs.push_back(pair);
    }
    return pairs;
}

std::vector<DistancePair> cluster_distances(const ClusterSubsets& subsets, const FeaturePool& pool,
                                            const FeaturePool& target, const DistanceOptions& options,
                                            std::vector<std::string>* warnings) {
    return cluster_distances(subsets, pool, target.matrix, options, warnings);
}

ClusterScores sampling_scores(std::span<const DistancePair> pairs, double lambda) {
    if (pairs.empty()) throw ValidationError("sampling_scores: no clusters");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("sampling_scores: lambda must lie in [0, 1]");
    std::vector<double> gaps;
    std::vector<double> vgaps;
    for (const auto& p : pairs) {
        gaps.push_back(p.fid);
        vgaps.push_back(p.v_gap);
    }
    const auto by_gap = softmax_negated(gaps);
    const auto by_vgap = softmax_negated(vgaps);

    ClusterScores scores;
    scores.lambda = lambda;
    scores.distances.assign(pairs.begin(), pairs.end());
    scores.weights.resize(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        scores.weights[k] = lambda * by_gap[k] + (1.0 - lambda) * by_vgap[k];
    }
    return scores;
}

ClusterScores sampling_scores(std::span<const DistancePair> pairs, double lambda, const ClusterSubsets& subsets) {
    if (pairs.size() != subsets.clusters.size()) {
        throw ValidationError("sampling_scores: distance count does not match cluster count");
    }
    auto scores = sampling_scores(pairs, lambda);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        const auto count = subsets.clusters[k].id_count();
        scores.id_counts.push_back(count);
        scores.identity_weights.push_back(count ? scores.weights[k] / static_cast<double>(count) : 0.0);
    }
    return scores;
}

ProxySet sample_proxy(const FeaturePool& pool, const ClusterSubsets& subsets, const ClusterScores& scores,
                      std::size_t n_identities, std::uint64_t seed) {
    if (scores.weights.size() != subsets.clusters.size()) {
        throw ValidationError("sample_proxy: score count does not match cluster count");
    }
    std::vector<const std::string*> ids;
    std::vector<double> weight;
    for (std::size_t k = 0; k < subsets.clusters.size(); ++k) {
        const auto& cluster = subsets.clusters[k];
        for (const auto& id : cluster.identity_ids) {
            ids.push_back(&id);
            weight.push_back(scores.weights[k] / static_cast<double>(cluster.id_count()));
        }
    }
    if (n_identities > ids.size()) {
        throw ValidationError("sample_proxy: n_identities=" + std::to_string(n_identities) +
                              " exceeds pool identities " + std::to_string(ids.size()));
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<bool> taken(ids.size(), false);
    std::vector<std::string> drawn;
    drawn.reserve(n_identities);
    for (std::size_t draw = 0; draw < n_identities; ++draw) {
        double total = 0.0;
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (!taken[i]) total += weight[i];

        std::optional<std::size_t> pick;
        const double u = unit(rng);
        if (total > 0.0) {
            const double target = u * total;
            double acc = 0.0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (taken[i] || weight[i] <= 0.0) continue;
                acc += weight[i];
                pick = i;
                if (acc > target) break;
            }
        } else {
            // remaining mass underflowed to zero: fall back to a uniform draw
            const std::size_t remaining = ids.size() - draw;
            auto skip = std::min(static_cast<std::size_t>(u * static_cast<double>(remaining)), remaining - 1);
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (taken[i]) continue;
                if (skip-- == 0) {
                    pick = i;
                    break;
                }
            }
        }
        taken[*pick] = true;
        drawn.push_back(*ids[*pick]);
    }

    SearchPass pass;
    pass.seed = seed;
    pass.scores = scores;
    pass.sampled = std::move(drawn);
    SearchParams params;
    params.lambda = scores.lambda;
    params.k = subsets.clusters.size();
    params.n_identities = n_identities;
    params.seed = seed;
    std::vector<SearchPass> passes;
    passes.push_back(std::move(pass));
    return assemble(pool, params, std::move(passes));
}

SearchContext prepare_search(const FeaturePool& pool, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
    SearchContext context;
    context.ids = id_average(pool);
    context.model = kmeans(context.ids, k, seed, max_iters);
    context.subsets = materialize_subsets(pool, context.model);
    return context;
}

ProxySet search_proxy(const FeaturePool& pool, const FeaturePool& target, const SearchParams& params) {
    params.validate();
    return search_proxy(prepare_search(pool, params.k, params.seed, params.max_iters), pool, target, params);
}

ProxySet search_proxy(const SearchContext& context, const FeaturePool& pool, const FeaturePool& target,
                      const SearchParams& params) {
    params.validate();
    if (params.camera_aware) return camera_aware_search(context, pool, target, params);
    if (params.n_identities > context.ids.identity_ids.size()) {
        throw ValidationError("n_identities=" + std::to_string(params.n_identities) + " exceeds pool identities " +
                              std::to_string(context.ids.identity_ids.size()));
    }
    std::vector<SearchPass> passes;
    passes.push_back(run_pass(context, pool, target.matrix, params, std::nullopt, params.seed));
    return assemble(pool, params, std::move(passes));
}

ProxySet camera_aware_search(const FeaturePool& pool, const FeaturePool& target, const SearchParams& params) {
    params.validate();
    if (!target.has_cameras()) throw ValidationError("camera-aware search: camera_id required on every target image");
    return camera_aware_search(prepare_search(pool, params.k, params.seed, params.max_iters), pool, target, params);
}

ProxySet camera_aware_search(const SearchContext& context, const FeaturePool& pool, const FeaturePool& target,
                             const SearchParams& params) {
    params.validate();
    if (!target.has_cameras()) throw ValidationError("camera-aware search: camera_id required on every target image");
    if (params.n_identities > context.ids.identity_ids.size()) {
        throw ValidationError("n_identities=" + std::to_string(params.n_identities) + " exceeds pool identities " +
                              std::to_string(context.ids.identity_ids.size()));
    }
    std::set<int> cameras;
    for (const auto& r : target.records) cameras.insert(*r.camera_id);

    std::vector<SearchPass> passes;
    std::uint64_t offset = 0;
    for (int camera : cameras) {
        const auto rows = target_camera_rows(target, camera);
        if (rows.size() < 2) {
            throw ValidationError("camera-aware search: camera " + std::to_string(camera) + " has " +
                                  std::to_string(rows.size()) + " target images, need at least 2");
        }
        passes.push_back(run_pass(context, pool, target.gather(rows), params, camera, params.seed + offset++));
    }
    return assemble(pool, params, std::move(passes));
}

std::vector<DatasetShare> composition(const ProxySet& proxy, const FeaturePool& pool) {
    std::map<std::string, DatasetShare> by_name;
    std::unordered_set<std::string> seen;
    for (const auto& r : proxy.records) {
        auto& share = by_name[r.dataset_name];
        share.dataset = r.dataset_name;
        ++share.images;
        if (seen.insert(identity_key(r)).second) ++share.identities;
    }
    std::vector<DatasetShare> out;
    for (const auto& name : pool.datasets) {
        DatasetShare share = by_name.contains(name) ? by_name[name] : DatasetShare{name};
        share.identity_fraction =
            seen.empty() ? 0.0 : static_cast<double>(share.identities) / static_cast<double>(seen.size());
        share.image_fraction = proxy.records.empty()
                                   ? 0.0
                                   : static_cast<double>(share.images) / static_cast<double>(proxy.records.size());
        out.push_back(share);
    }
    return out;
}

std::string proxy_jsonl(const ProxySet& proxy) {
    std::string out;
    for (const auto& r : proxy.records) {
        out += record_json(r).dump();
        out.push_back('\n');
    }
    return out;
}

std::vector<ImageRecord> read_proxy_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open proxy file: " + path.string());
    std::vector<ImageRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("provenance")) continue;
            ImageRecord r;
            r.image_id = j.at("image_id").get<std::string>();
            r.identity_id = j.at("identity_id").get<std::string>();
            r.dataset_name = j.at("dataset_name").get<std::string>();
            if (!j.at("camera_id").is_null()) r.camera_id = j.at("camera_id").get<int>();
            r.row_index = j.at("row_index").get<std::size_t>();
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(),
                                  {{path.string(), line_no, e.what()}});
        }
    }
    return records;
}

std::string proxy_summary_json(const ProxySet& proxy, const FeaturePool& pool) {
    const auto& p = proxy.params;
    const std::string gap_key = p.metric == GapMetric::fid ? "fid" : "mmd2";
    nlohmann::json j;
    j["params"] = {{"lambda", p.lambda},
                   {"k", p.k},
                   {"n_identities", p.n_identities},
                   {"seed", p.seed},
                   {"camera_aware", p.camera_aware},
                   {"max_iters", p.max_iters},
                   {"metric", to_string(p.metric)},
                   {"mmd_bandwidth", p.mmd_bandwidth}};
    auto& passes = j["passes"] = nlohmann::json::array();
    for (const auto& pass : proxy.passes) {
        nlohmann::json pj;
        pj["camera"] = pass.camera ? nlohmann::json(*pass.camera) : nlohmann::json(nullptr);
        pj["seed"] = pass.seed;
        pj["target_rows"] = pass.target_rows;
        pj["sampled_identities"] = pass.sampled.size();
        pj["warnings"] = pass.warnings;
        auto& clusters = pj["clusters"] = nlohmann::json::array();
        for (std::size_t k = 0; k < pass.scores.weights.size(); ++k) {
            nlohmann::json c;
            c["cluster"] = k;
            c[gap_key] = pass.scores.distances[k].fid;
            c["v_gap"] = pass.scores.distances[k].v_gap;
            c["w"] = pass.scores.weights[k];
            if (k < pass.scores.id_counts.size()) {
                c["id_count"] = pass.scores.id_counts[k];
                c["identity_weight"] = pass.scores.identity_weights[k];
            }
            clusters.push_back(std::move(c));
        }
        passes.push_back(std::move(pj));
    }
    j["identities"] = proxy.identity_ids.size();
    j["images"] = proxy.records.size();
    auto& comp = j["composition"] = nlohmann::json::array();
    for (const auto& share : composition(proxy, pool)) {
        comp.push_back({{"dataset", share.dataset},
                        {"identities", share.identities},
                        {"images", share.images},
                        {"identity_fraction", share.identity_fraction},
                        {"image_fraction", share.image_fraction}});
    }
    return j.dump(2);
}

}  // namespace proxyset
