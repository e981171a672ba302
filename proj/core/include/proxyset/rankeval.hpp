#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "proxyset/corpus.hpp"
#include "proxyset/types.hpp"

namespace proxyset {

inline constexpr std::size_t kDefaultCmcRanks[] = {1, 5, 10};

struct ReidResult {
    double mean_ap = 0.0;
    std::vector<std::size_t> ranks;     // e.g. {1, 5, 10}
    std::vector<double> cmc;            // match rate at each entry of `ranks`
    std::size_t queries = 0;
};

/// Re-ID retrieval on a labeled image set.
///
/// One query per (identity, camera) pair whose identity appears under at least two
/// cameras; the query is the image with the lexicographically smallest image_id.
/// The gallery is every image, minus those sharing both identity and camera with
/// the query. Gallery items are ranked by descending cosine similarity (ties by
/// gallery index); AP is the mean of precision at each true match.
ReidResult reid_eval(const MatrixView& features, std::span<const ImageRecord> images,
                     std::span<const std::size_t> ranks = kDefaultCmcRanks);

/// Fractional ranks (1-based, ties share the mean rank).
std::vector<double> midranks(std::span<const double> values);

double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson correlation of mid-ranks.
double spearman(std::span<const double> x, std::span<const double> y);

/// Tie-corrected Kendall tau-b, exact O(n^2) pair count.
double kendall_tau_b(std::span<const double> x, std::span<const double> y);

enum class RankStatistic { spearman, kendall };

/// Two-sided permutation p-value, (1 + #{|stat(perm)| >= |stat(obs)|}) / (n_perm + 1).
double perm_pvalue(std::span<const double> x, std::span<const double> y, RankStatistic statistic,
                   std::size_t n_perm, std::uint64_t seed);

/// Models x datasets table of scalar scores (mAP or any other metric).
struct AccuracyTable {
    std::vector<std::string> model_ids;
    std::vector<std::string> dataset_ids;
    Matrix values;

    std::size_t column_index(const std::string& dataset) const;
    std::vector<double> column(const std::string& dataset) const;
    void set_column(const std::string& dataset, std::span<const double> values);
};

AccuracyTable read_accuracy_csv(const std::filesystem::path& path);
void write_accuracy_csv(const std::filesystem::path& path, const AccuracyTable& table);

struct QualityReport {
    std::string proxy_column;
    std::string reference_column;
    std::size_t models = 0;
    double spearman_rho = 0.0;
    double kendall_tau = 0.0;
    double p_value_rho = 1.0;
    double p_value_tau = 1.0;
    std::size_t permutations = 0;
    std::string best_on_proxy;
    std::string best_on_reference;
    double regret = 0.0;  // reference score of best_on_reference minus that of best_on_proxy
};

QualityReport proxy_quality(const AccuracyTable& table, const std::string& proxy_column,
                            const std::string& reference_column, std::size_t n_perm = 999,
                            std::uint64_t seed = 0);

std::string quality_report_json(const QualityReport& report);

}  // namespace proxyset
