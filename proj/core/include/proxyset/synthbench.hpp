#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "proxyset/corpus.hpp"
#include "proxyset/rankeval.hpp"
#include "proxyset/search.hpp"

namespace proxyset {

/// Synthetic multi-domain world. Every domain is a Gaussian mixture with one
/// component per identity; the target is one extra held-out domain.
struct SynthSpec {
    std::size_t dims = 8;
    std::size_t n_domains = 6;  // candidate domains in the pool (target not counted)
    std::size_t identities_per_domain = 40;
    std::size_t images_per_identity = 10;
    std::size_t cameras = 3;
    double domain_mean_spread = 2.0;
    double within_domain_scale = 1.0;
    std::size_t n_models = 30;
    double model_noise = 0.02;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SynthWorld {
    SynthSpec spec;
    FeaturePool pool;
    FeaturePool target;
    Matrix image_accuracy;         // models x pool rows
    Matrix target_image_accuracy;  // models x target rows
    std::vector<double> target_accuracy;
    AccuracyTable domain_accuracy;  // one column per pool domain plus "target"

    /// Per-model accuracy on an arbitrary subset of pool rows.
    std::vector<double> proxy_accuracy(std::span<const std::size_t> pool_rows) const;
    std::vector<std::size_t> domain_rows(const std::string& domain) const;
};

/// Model m scores an image x as sigmoid(quality_m + competence_m . affinity(x)) plus
/// per-identity noise, where affinity is a smooth random Fourier map, so domains
/// close in feature space rank models alike.
SynthWorld gen_world(const SynthSpec& spec);

struct TrendGrid {
    std::vector<double> lambdas{0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    std::size_t k = 20;
    std::size_t n_identities = 15;
    std::size_t n_random = 20;
    double reference_lambda = 0.6;
    std::uint64_t seed = 0;
};

struct TrendRow {
    std::string proxy_id;
    std::string kind;  // target | domain | random | searched
    double lambda = -1.0;
    double fid = 0.0;
    double v_gap = 0.0;
    double rho = 0.0;
    double tau = 0.0;
};

struct TrendReport {
    std::vector<TrendRow> rows;
    double pearson_fid_rho = 0.0;
    double pearson_vgap_rho = 0.0;
    double random_mean_rho = 0.0;
    double random_mean_fid = 0.0;
    double searched_rho = 0.0;  // at reference_lambda
    double searched_fid = 0.0;
    double searched_rho_win_rate = 0.0;  // fraction of random proxies with rho <= searched rho
    double searched_fid_win_rate = 0.0;  // fraction of random proxies with fid > searched fid
};

TrendRow evaluate_candidate(const SynthWorld& world, const GaussianSummary& target_summary,
                            std::span<const std::size_t> rows);

/// Uniformly samples n distinct pool identities and returns all their rows.
std::vector<std::size_t> random_proxy_rows(const FeaturePool& pool, std::size_t n_identities, std::uint64_t seed);

TrendReport run_trend(const SynthWorld& world, const TrendGrid& grid);

std::string trend_csv(const TrendReport& report);
std::string trend_summary_json(const TrendReport& report);

/// Writes pool.csv/pool.emb, target.csv/target.emb and accuracy.csv into `dir`.
void export_world(const SynthWorld& world, const std::filesystem::path& dir);

}  // namespace proxyset
