#include "proxyset/rankeval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "csv.hpp"

namespace proxyset {
namespace {

void require_pair(std::span<const double> x, std::span<const double> y, const char* op) {
    if (x.size() != y.size()) {
        throw ValidationError(std::string(op) + ": length mismatch (" + std::to_string(x.size()) + " vs " +
                              std::to_string(y.size()) + ")");
    }
    if (x.size() < 2) throw ValidationError(std::string(op) + ": need at least 2 observations");
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(x.begin(), x.end(), finite) || !std::all_of(y.begin(), y.end(), finite)) {
        throw ValidationError(std::string(op) + ": non-finite input");
    }
}

int sign(double v) { return (v > 0.0) - (v < 0.0); }

std::string format_double(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

double statistic_of(RankStatistic s, std::span<const double> x, std::span<const double> y) {
    return s == RankStatistic::spearman ? spearman(x, y) : kendall_tau_b(x, y);
}

}  // namespace

ReidResult reid_eval(const MatrixView& features, std::span<const ImageRecord> images,
                     std::span<const std::size_t> ranks) {
    const auto n = images.size();
    if (static_cast<std::size_t>(features.rows()) != n) {
        throw ValidationError("reid_eval: row-count mismatch (" + std::to_string(features.rows()) +
                              " feature rows for " + std::to_string(n) + " images)");
    }
    std::vector<std::string> keys(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!images[i].camera_id) throw ValidationError("reid_eval: image " + images[i].image_id + " has no camera_id");
        if (images[i].identity_id.empty()) {
            throw ValidationError("reid_eval: image " + images[i].image_id + " has no identity_id");
        }
        keys[i] = identity_key(images[i]);
    }

    std::unordered_map<std::string, std::vector<int>> cameras_of;
    for (std::size_t i = 0; i < n; ++i) {
        auto& cams = cameras_of[keys[i]];
        if (std::find(cams.begin(), cams.end(), *images[i].camera_id) == cams.end()) {
            cams.push_back(*images[i].camera_id);
        }
    }
    std::map<std::pair<std::string, int>, std::size_t> query_of;
    for (std::size_t i = 0; i < n; ++i) {
        if (cameras_of[keys[i]].size() < 2) continue;
        auto [it, inserted] = query_of.try_emplace({keys[i], *images[i].camera_id}, i);
        if (!inserted && images[i].image_id < images[it->second].image_id) it->second = i;
    }
    if (query_of.empty()) throw ValidationError("reid_eval: no valid query (no identity spans two cameras)");

    Eigen::VectorXd norms(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) norms(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(i)).norm();

    ReidResult result;
    result.ranks.assign(ranks.begin(), ranks.end());
    result.cmc.assign(ranks.size(), 0.0);
    double ap_sum = 0.0;

    std::vector<std::size_t> gallery;
    std::vector<double> sim(n);
    for (const auto& [query_key, q] : query_of) {
        const auto qi = static_cast<Eigen::Index>(q);
        gallery.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (keys[j] == keys[q] && images[j].camera_id == images[q].camera_id) continue;
            const auto jj = static_cast<Eigen::Index>(j);
            const double denom = norms(qi) * norms(jj);
            sim[j] = denom > 0.0 ? features.row(qi).dot(features.row(jj)) / denom : 0.0;
            gallery.push_back(j);
        }
        std::stable_sort(gallery.begin(), gallery.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });

        std::size_t hits = 0;
        double precision_sum = 0.0;
        std::optional<std::size_t> first_hit;
        for (std::size_t pos = 0; pos < gallery.size(); ++pos) {
            if (keys[gallery[pos]] != keys[q]) continue;
            ++hits;
            precision_sum += static_cast<double>(hits) / static_cast<double>(pos + 1);
            if (!first_hit) first_hit = pos;
        }
        ap_sum += precision_sum / static_cast<double>(hits);
        for (std::size_t r = 0; r < ranks.size(); ++r) {
            if (*first_hit < ranks[r]) result.cmc[r] += 1.0;
        }
    }
    result.queries = query_of.size();
    result.mean_ap = ap_sum / static_cast<double>(result.queries);
    for (double& c : result.cmc) c /= static_cast<double>(result.queries);
    return result;
}

std::vector<double> midranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = mid;
        i = j + 1;
    }
    return ranks;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    require_pair(x, y, "pearson");
    const double n = static_cast<double>(x.size());
    double mx = 0.0;
    double my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw ValidationError("pearson: zero variance input");
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> x, std::span<const double> y) {
    require_pair(x, y, "spearman");
    const auto rx = midranks(x);
    const auto ry = midranks(y);
    return pearson(rx, ry);
}

double kendall_tau_b(std::span<const double> x, std::span<const double> y) {
    require_pair(x, y, "kendall_tau_b");
    long long concordant = 0;
    long long discordant = 0;
    long long tied_x_only = 0;
    long long tied_y_only = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        for (std::size_t j = i + 1; j < x.size(); ++j) {
            const int sx = sign(x[i] - x[j]);
            const int sy = sign(y[i] - y[j]);
            if (sx == 0 && sy == 0) continue;
            if (sx == 0) {
                ++tied_x_only;
            } else if (sy == 0) {
                ++tied_y_only;
            } else if (sx == sy) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const long long untied_x = concordant + discordant + tied_y_only;
    const long long untied_y = concordant + discordant + tied_x_only;
    if (untied_x == 0 || untied_y == 0) throw ValidationError("kendall_tau_b: all values tied on one side");
    return static_cast<double>(concordant - discordant) /
           std::sqrt(static_cast<double>(untied_x) * static_cast<double>(untied_y));
}

double perm_pvalue(std::span<const double> x, std::span<const double> y, RankStatistic statistic,
                   std::size_t n_perm, std::uint64_t seed) {
    if (n_perm < 99) throw ValidationError("perm_pvalue: n_perm must be >= 99");
    const double observed = std::abs(statistic_of(statistic, x, y));
    const double threshold = observed - 1e-12 * std::max(1.0, observed);

    std::vector<double> shuffled(y.begin(), y.end());
    std::mt19937_64 rng(seed);
    std::size_t extreme = 0;
    for (std::size_t p = 0; p < n_perm; ++p) {
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        if (std::abs(statistic_of(statistic, x, shuffled)) >= threshold) ++extreme;
    }
    return static_cast<double>(1 + extreme) / static_cast<double>(n_perm + 1);
}

std::size_t AccuracyTable::column_index(const std::string& dataset) const {
    const auto it = std::find(dataset_ids.begin(), dataset_ids.end(), dataset);
    if (it == dataset_ids.end()) throw ValidationError("accuracy table has no column '" + dataset + "'");
    return static_cast<std::size_t>(it - dataset_ids.begin());
}

std::vector<double> AccuracyTable::column(const std::string& dataset) const {
    const auto c = static_cast<Eigen::Index>(column_index(dataset));
    std::vector<double> out(static_cast<std::size_t>(values.rows()));
    for (Eigen::Index r = 0; r < values.rows(); ++r) out[static_cast<std::size_t>(r)] = values(r, c);
    return out;
}

void AccuracyTable::set_column(const std::string& dataset, std::span<const double> column_values) {
    if (column_values.size() != model_ids.size()) throw ValidationError("set_column: length does not match models");
    auto it = std::find(dataset_ids.begin(), dataset_ids.end(), dataset);
    Eigen::Index c = 0;
    if (it == dataset_ids.end()) {
        dataset_ids.push_back(dataset);
        values.conservativeResize(static_cast<Eigen::Index>(model_ids.size()), static_cast<Eigen::Index>(dataset_ids.size()));
        c = values.cols() - 1;
    } else {
        c = static_cast<Eigen::Index>(it - dataset_ids.begin());
    }
    for (std::size_t r = 0; r < column_values.size(); ++r) values(static_cast<Eigen::Index>(r), c) = column_values[r];
}

AccuracyTable read_accuracy_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open accuracy table: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(path.string() + ": empty accuracy table");
    csv::normalize_line(line, true);
    auto header = csv::split_line(line);
    if (header.empty() || header[0] != "model_id") {
        throw ValidationError(path.string() + ": first column must be model_id");
    }

    AccuracyTable table;
    table.dataset_ids.assign(header.begin() + 1, header.end());
    std::vector<std::vector<double>> rows;
    std::vector<Issue> issues;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        csv::normalize_line(line, false);
        if (line.empty()) continue;
        const auto fields = csv::split_line(line);
        if (fields.size() != header.size()) {
            issues.push_back({path.string(), line_no, "expected " + std::to_string(header.size()) + " fields"});
            continue;
        }
        std::vector<double> row;
        for (std::size_t c = 1; c < fields.size(); ++c) {
            double v = 0.0;
            const auto& f = fields[c];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
                issues.push_back({path.string(), line_no, "missing or non-numeric cell in column " + header[c]});
                break;
            }
            row.push_back(v);
        }
        if (row.size() != table.dataset_ids.size()) continue;
        table.model_ids.push_back(fields[0]);
        rows.push_back(std::move(row));
    }
    if (!issues.empty()) throw ValidationError(path.string() + ": malformed accuracy table", std::move(issues));

    table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(table.dataset_ids.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    return table;
}

void write_accuracy_csv(const std::filesystem::path& path, const AccuracyTable& table) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write accuracy table: " + path.string());
    std::vector<std::string> header{"model_id"};
    header.insert(header.end(), table.dataset_ids.begin(), table.dataset_ids.end());
    out << csv::join(header) << '\n';
    for (std::size_t r = 0; r < table.model_ids.size(); ++r) {
        std::vector<std::string> fields{table.model_ids[r]};
        for (Eigen::Index c = 0; c < table.values.cols(); ++c)
            fields.push_back(format_double(table.values(static_cast<Eigen::Index>(r), c)));
        out << csv::join(fields) << '\n';
    }
}

QualityReport proxy_quality(const AccuracyTable& table, const std::string& proxy_column,
                            const std::string& reference_column, std::size_t n_perm, std::uint64_t seed) {
    const auto proxy = table.column(proxy_column);
    const auto reference = table.column(reference_column);

    QualityReport report;
    report.proxy_column = proxy_column;
    report.reference_column = reference_column;
    report.models = proxy.size();
    report.spearman_rho = spearman(proxy, reference);
    report.kendall_tau = kendall_tau_b(proxy, reference);
    report.permutations = n_perm;
    report.p_value_rho = perm_pvalue(proxy, reference, RankStatistic::spearman, n_perm, seed);
    report.p_value_tau = perm_pvalue(proxy, reference, RankStatistic::kendall, n_perm, seed);

    const auto best_proxy = static_cast<std::size_t>(std::max_element(proxy.begin(), proxy.end()) - proxy.begin());
    const auto best_ref =
        static_cast<std::size_t>(std::max_element(reference.begin(), reference.end()) - reference.begin());
    report.best_on_proxy = table.model_ids[best_proxy];
    report.best_on_reference = table.model_ids[best_ref];
    report.regret = reference[best_ref] - reference[best_proxy];
    return report;
}

std::string quality_report_json(const QualityReport& r) {
    nlohmann::json j;
    j["proxy_column"] = r.proxy_column;
    j["reference_column"] = r.reference_column;
    j["models"] = r.models;
    j["spearman_rho"] = r.spearman_rho;
    j["kendall_tau"] = r.kendall_tau;
    j["p_value_rho"] = r.p_value_rho;
    j["p_value_tau"] = r.p_value_tau;
    j["permutations"] = r.permutations;
    j["best_on_proxy"] = r.best_on_proxy;
    j["best_on_reference"] = r.best_on_reference;
    j["regret"] = r.regret;
    return j.dump(2);
}

}  // namespace proxyset
