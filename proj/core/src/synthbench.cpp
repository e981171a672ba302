#include "proxyset/synthbench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace proxyset {
namespace {

constexpr std::size_t kAffinityFeatures = 6;
constexpr double kImageNoise = 0.5;            // image scatter relative to identity scatter
constexpr double kScaleJitterPerSpread = 0.15;  // log-scale jitter of each domain, per unit spread
constexpr double kFrequencyPerSpread = 0.2;     // affinity frequency, relative to the feature extent
constexpr double kQualitySpread = 0.2;          // domain-independent model quality
constexpr double kCompetenceGain = 3.0;
constexpr double kTargetJitter = 0.25;          // target offset from its anchor domain, per unit spread

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::string fmt(double v) {
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

struct Domain {
    std::string name;
    Eigen::RowVectorXd mean;
    Matrix features;
    std::vector<ImageRecord> records;
    std::vector<std::size_t> identity_of_row;  // local identity index
};

/// `anchor` places the domain mean near an existing mean instead of drawing it freely.
Domain make_domain(const SynthSpec& spec, const std::string& name, std::mt19937_64& rng,
                   const Eigen::RowVectorXd* anchor = nullptr) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto d = static_cast<Eigen::Index>(spec.dims);
    const double spread = anchor ? kTargetJitter * spec.domain_mean_spread : spec.domain_mean_spread;
    Eigen::RowVectorXd mean = anchor ? *anchor : Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index c = 0; c < d; ++c) mean(c) += spread * normal(rng);
    const double jitter = kScaleJitterPerSpread * spec.domain_mean_spread * normal(rng);
    const double scale = spec.within_domain_scale * std::exp(jitter);

    Domain dom;
    dom.name = name;
    dom.mean = mean;
    const std::size_t rows = spec.identities_per_domain * spec.images_per_identity;
    dom.features.resize(static_cast<Eigen::Index>(rows), d);
    std::size_t row = 0;
    for (std::size_t id = 0; id < spec.identities_per_domain; ++id) {
        Eigen::RowVectorXd center(d);
        for (Eigen::Index c = 0; c < d; ++c) center(c) = mean(c) + scale * normal(rng);
        for (std::size_t img = 0; img < spec.images_per_identity; ++img, ++row) {
            for (Eigen::Index c = 0; c < d; ++c) {
                dom.features(static_cast<Eigen::Index>(row), c) = center(c) + kImageNoise * scale * normal(rng);
            }
            ImageRecord rec;
            rec.identity_id = "id" + std::to_string(id);
            rec.image_id = name + "_" + rec.identity_id + "_" + std::to_string(img);
            rec.dataset_name = name;
            rec.camera_id = static_cast<int>((id + img) % spec.cameras);
            dom.records.push_back(std::move(rec));
            dom.identity_of_row.push_back(id);
        }
    }
    return dom;
}

struct ModelBank {
    Eigen::VectorXd quality;  // per model
    Matrix competence;        // models x features
    Matrix frequency;         // features x dims
    Eigen::VectorXd phase;    // features
};

ModelBank make_models(const SynthSpec& spec, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * 3.14159265358979323846);
    const auto m = static_cast<Eigen::Index>(spec.n_models);
    const auto r = static_cast<Eigen::Index>(kAffinityFeatures);
    const auto d = static_cast<Eigen::Index>(spec.dims);
    const double freq = kFrequencyPerSpread / std::max(spec.domain_mean_spread, spec.within_domain_scale);

    ModelBank bank;
    bank.quality.resize(m);
    bank.competence.resize(m, r);
    bank.frequency.resize(r, d);
    bank.phase.resize(r);
    for (Eigen::Index i = 0; i < r; ++i) {
        for (Eigen::Index c = 0; c < d; ++c) bank.frequency(i, c) = freq * normal(rng);
        bank.phase(i) = angle(rng);
    }
    for (Eigen::Index i = 0; i < m; ++i) {
        bank.quality(i) = kQualitySpread * normal(rng);
        for (Eigen::Index j = 0; j < r; ++j) bank.competence(i, j) = normal(rng);
    }
    return bank;
}

Matrix score_images(const ModelBank& bank, const Domain& dom, const SynthSpec& spec, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto models = bank.quality.size();
    const Eigen::Index rows = dom.features.rows();

    Matrix affinity(rows, bank.frequency.rows());
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < bank.frequency.rows(); ++j) {
            affinity(i, j) = std::cos(dom.features.row(i).dot(bank.frequency.row(j)) + bank.phase(j));
        }
    }
    // per (model, identity) evaluation noise
    Matrix noise(models, static_cast<Eigen::Index>(spec.identities_per_domain));
    for (Eigen::Index m = 0; m < models; ++m)
        for (Eigen::Index id = 0; id < noise.cols(); ++id) noise(m, id) = spec.model_noise * normal(rng);

    Matrix acc(models, rows);
    for (Eigen::Index m = 0; m < models; ++m) {
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double z = bank.quality(m) + kCompetenceGain * bank.competence.row(m).dot(affinity.row(i)) /
                                                   std::sqrt(static_cast<double>(bank.frequency.rows()));
            const auto id = static_cast<Eigen::Index>(dom.identity_of_row[static_cast<std::size_t>(i)]);
            acc(m, i) = std::clamp(sigmoid(z) + noise(m, id), 0.0, 1.0);
        }
    }
    return acc;
}

std::vector<double> mean_columns(const Matrix& acc, std::span<const std::size_t> cols) {
    std::vector<double> out(static_cast<std::size_t>(acc.rows()), 0.0);
    for (Eigen::Index m = 0; m < acc.rows(); ++m) {
        double s = 0.0;
        for (auto c : cols) s += acc(m, static_cast<Eigen::Index>(c));
        out[static_cast<std::size_t>(m)] = s / static_cast<double>(cols.size());
    }
    return out;
}

FeaturePool to_pool(std::vector<Domain>& domains) {
    FeaturePool pool;
    Eigen::Index total = 0;
    for (const auto& d : domains) total += d.features.rows();
    pool.matrix.resize(total, domains.front().features.cols());
    Eigen::Index row = 0;
    for (auto& d : domains) {
        pool.matrix.middleRows(row, d.features.rows()) = d.features;
        for (auto& rec : d.records) {
            rec.row_index = static_cast<std::size_t>(row++);
            pool.records.push_back(rec);
        }
        pool.datasets.push_back(d.name);
    }
    return pool;
}

}  // namespace

void SynthSpec::validate() const {
    if (dims < 1 || n_domains < 1 || images_per_identity < 1 || n_models < 2 || cameras < 1) {
        throw ValidationError("synth spec: counts must be >= 1 (n_models >= 2)");
    }
    if (identities_per_domain < 2) throw ValidationError("synth spec: identities_per_domain must be >= 2");
    if (!(domain_mean_spread >= 0.0) || !(within_domain_scale > 0.0) || !(model_noise >= 0.0)) {
        throw ValidationError("synth spec: spread >= 0, scale > 0 and noise >= 0 required");
    }
}

std::vector<double> SynthWorld::proxy_accuracy(std::span<const std::size_t> pool_rows) const {
    if (pool_rows.empty()) throw ValidationError("proxy_accuracy: empty proxy");
    return mean_columns(image_accuracy, pool_rows);
}

std::vector<std::size_t> SynthWorld::domain_rows(const std::string& domain) const {
    std::vector<std::size_t> rows;
    for (const auto& r : pool.records)
        if (r.dataset_name == domain) rows.push_back(r.row_index);
    return rows;
}

SynthWorld gen_world(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);

    std::vector<Domain> domains;
    for (std::size_t d = 0; d < spec.n_domains; ++d) domains.push_back(make_domain(spec, "domain" + std::to_string(d), rng));
    // The target sits near one pool domain, so the pool holds a reasonable proxy.
    std::uniform_int_distribution<std::size_t> pick(0, spec.n_domains - 1);
    const Eigen::RowVectorXd anchor = domains[pick(rng)].mean;
    std::vector<Domain> target_domain;
    target_domain.push_back(make_domain(spec, "target", rng, &anchor));
    for (auto& rec : target_domain.front().records) rec.identity_id = "?";

    const ModelBank bank = make_models(spec, rng);

    SynthWorld world;
    world.spec = spec;
    const auto models = static_cast<Eigen::Index>(spec.n_models);
    std::vector<Matrix> per_domain;
    Eigen::Index total = 0;
    for (const auto& d : domains) {
        per_domain.push_back(score_images(bank, d, spec, rng));
        total += d.features.rows();
    }
    world.image_accuracy.resize(models, total);
    Eigen::Index col = 0;
    for (const auto& acc : per_domain) {
        world.image_accuracy.middleCols(col, acc.cols()) = acc;
        col += acc.cols();
    }
    world.target_image_accuracy = score_images(bank, target_domain.front(), spec, rng);

    world.pool = to_pool(domains);
    world.target = to_pool(target_domain);

    std::vector<std::size_t> all_target(static_cast<std::size_t>(world.target.matrix.rows()));
    std::iota(all_target.begin(), all_target.end(), std::size_t{0});
    world.target_accuracy = mean_columns(world.target_image_accuracy, all_target);

    auto& table = world.domain_accuracy;
    for (std::size_t m = 0; m < spec.n_models; ++m) table.model_ids.push_back("model" + std::to_string(m));
    table.values.resize(models, 0);
    for (const auto& name : world.pool.datasets) {
        const auto rows = world.domain_rows(name);
        table.set_column(name, world.proxy_accuracy(rows));
    }
    table.set_column("target", world.target_accuracy);
    return world;
}

TrendRow evaluate_candidate(const SynthWorld& world, const GaussianSummary& target_summary,
                            std::span<const std::size_t> rows) {
    const Matrix features = world.pool.gather(rows);
    TrendRow row;
    row.fid = fid(summarize(features), target_summary);
    row.v_gap = v_gap(features, world.target.matrix);
    const auto acc = world.proxy_accuracy(rows);
    row.rho = spearman(acc, world.target_accuracy);
    row.tau = kendall_tau_b(acc, world.target_accuracy);
    return row;
}

std::vector<std::size_t> random_proxy_rows(const FeaturePool& pool, std::size_t n_identities, std::uint64_t seed) {
    std::vector<std::string> keys;
    std::unordered_map<std::string, std::size_t> slot;
    for (const auto& r : pool.records) {
        auto key = identity_key(r);
        if (slot.try_emplace(key, keys.size()).second) keys.push_back(std::move(key));
    }
    if (n_identities > keys.size()) throw ValidationError("random proxy: n_identities exceeds pool identities");
    std::vector<std::size_t> order(keys.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> chosen(keys.size(), false);
    for (std::size_t i = 0; i < n_identities; ++i) chosen[order[i]] = true;

    std::vector<std::size_t> rows;
    for (const auto& r : pool.records)
        if (chosen[slot.at(identity_key(r))]) rows.push_back(r.row_index);
    return rows;
}

TrendReport run_trend(const SynthWorld& world, const TrendGrid& grid) {
    if (grid.lambdas.empty()) throw ValidationError("trend grid: lambda list is empty");
    TrendReport report;
    const GaussianSummary target_summary = summarize(world.target.matrix);

    {
        TrendRow self;
        self.proxy_id = "target";
        self.kind = "target";
        self.fid = fid(target_summary, target_summary);
        self.v_gap = 0.0;
        self.rho = spearman(world.target_accuracy, world.target_accuracy);
        self.tau = kendall_tau_b(world.target_accuracy, world.target_accuracy);
        report.rows.push_back(self);
    }
    for (const auto& name : world.pool.datasets) {
        auto row = evaluate_candidate(world, target_summary, world.domain_rows(name));
        row.proxy_id = name;
        row.kind = "domain";
        report.rows.push_back(row);
    }
    std::vector<TrendRow> randoms;
    for (std::size_t r = 0; r < grid.n_random; ++r) {
        const auto rows = random_proxy_rows(world.pool, grid.n_identities, grid.seed + 1000 + r);
        auto row = evaluate_candidate(world, target_summary, rows);
        row.proxy_id = "random" + std::to_string(r);
        row.kind = "random";
        randoms.push_back(row);
        report.rows.push_back(row);
    }

    const SearchContext context = prepare_search(world.pool, grid.k, grid.seed);
    std::optional<TrendRow> reference;
    for (double lambda : grid.lambdas) {
        SearchParams params;
        params.lambda = lambda;
        params.k = grid.k;
        params.n_identities = grid.n_identities;
        params.seed = grid.seed;
        const auto proxy = search_proxy(context, world.pool, world.target, params);
        auto row = evaluate_candidate(world, target_summary, proxy.rows);
        row.proxy_id = "searched_l" + fmt(lambda);
        row.kind = "searched";
        row.lambda = lambda;
        report.rows.push_back(row);
        if (!reference || std::abs(lambda - grid.reference_lambda) < std::abs(reference->lambda - grid.reference_lambda)) {
            reference = row;
        }
    }

    std::vector<double> fids;
    std::vector<double> vgaps;
    std::vector<double> rhos;
    for (const auto& row : report.rows) {
        fids.push_back(row.fid);
        vgaps.push_back(row.v_gap);
        rhos.push_back(row.rho);
    }
    report.pearson_fid_rho = pearson(fids, rhos);
    report.pearson_vgap_rho = pearson(vgaps, rhos);

    report.searched_rho = reference->rho;
    report.searched_fid = reference->fid;
    if (!randoms.empty()) {
        std::size_t rho_wins = 0;
        std::size_t fid_wins = 0;
        for (const auto& r : randoms) {
            report.random_mean_rho += r.rho;
            report.random_mean_fid += r.fid;
            rho_wins += r.rho <= reference->rho;
            fid_wins += r.fid > reference->fid;
        }
        const double n = static_cast<double>(randoms.size());
        report.random_mean_rho /= n;
        report.random_mean_fid /= n;
        report.searched_rho_win_rate = static_cast<double>(rho_wins) / n;
        report.searched_fid_win_rate = static_cast<double>(fid_wins) / n;
    }
    return report;
}

std::string trend_csv(const TrendReport& report) {
    std::string out = "proxy_id,kind,fid,v_gap,rho,tau\n";
    for (const auto& r : report.rows) {
        out += r.proxy_id + "," + r.kind + "," + fmt(r.fid) + "," + fmt(r.v_gap) + "," + fmt(r.rho) + "," +
               fmt(r.tau) + "\n";
    }
    return out;
}

std::string trend_summary_json(const TrendReport& report) {
    nlohmann::json j;
    j["rows"] = report.rows.size();
    j["correlations"] = {{"pearson_fid_rho", report.pearson_fid_rho}, {"pearson_vgap_rho", report.pearson_vgap_rho}};
    j["searched"] = {{"rho", report.searched_rho}, {"fid", report.searched_fid}};
    j["random"] = {{"mean_rho", report.random_mean_rho}, {"mean_fid", report.random_mean_fid}};
    j["win_rates"] = {{"rho", report.searched_rho_win_rate}, {"fid", report.searched_fid_win_rate}};
    auto& searched = j["searched_by_lambda"] = nlohmann::json::array();
    for (const auto& r : report.rows) {
        if (r.kind != "searched") continue;
        searched.push_back({{"lambda", r.lambda}, {"fid", r.fid}, {"v_gap", r.v_gap}, {"rho", r.rho}, {"tau", r.tau}});
    }
    return j.dump(2);
}

void export_world(const SynthWorld& world, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_embeddings(dir / "pool.emb", world.pool.matrix);
    write_manifest(dir / "pool.csv", world.pool.records);
    write_embeddings(dir / "target.emb", world.target.matrix);
    write_manifest(dir / "target.csv", world.target.records);
    write_accuracy_csv(dir / "accuracy.csv", world.domain_accuracy);
}

}  // namespace proxyset
