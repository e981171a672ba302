#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <iostream>
#include <limits>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "proxyset/corpus.hpp"
#include "proxyset/rankeval.hpp"
#include "proxyset/search.hpp"
#include "proxyset/stats.hpp"
#include "proxyset/synthbench.hpp"

namespace proxyset::app {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

class Stopwatch {
public:
    double lap() {
        const auto now = Clock::now();
        const double s = std::chrono::duration<double>(now - start_).count();
        start_ = now;
        return s;
    }

private:
    Clock::time_point start_ = Clock::now();
};

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
        if (c == '\n' || c == '\r') c = ' ';
        if (c == '"') q += '"';
        q += c;
    }
    return q + "\"";
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << content;
    if (!out) throw ValidationError("write failed: " + path.string());
}

std::string with_provenance(const std::string& report, const json& prov) {
    json j = json::parse(report);
    j["provenance"] = prov;
    return j.dump(2) + "\n";
}

std::string provenance_comment(const json& prov) { return "# provenance " + prov.dump() + "\n"; }

void write_config_echo(const RunConfig& config, const std::string& command) {
    // out and jobs do not affect results; leaving them out keeps reruns byte-identical
    json effective = config.effective;
    effective.erase("out");
    effective.erase("jobs");
    json echo{{"config", effective}, {"provenance", provenance(config, command)}};
    write_file(config.out / "config.json", echo.dump(2) + "\n");
}

FeaturePool load_configured_pool(const RunConfig& config) {
    if (config.pool_manifests.empty()) throw ValidationError("pool.manifests is empty");
    return load_pool(config.pool_manifests, config.pool_embeddings);
}

FeaturePool load_configured_target(const RunConfig& config) {
    if (config.target_manifest.empty() || config.target_embeddings.empty()) {
        throw ValidationError("target.manifest and target.embeddings are required");
    }
    return load_target(config.target_manifest, config.target_embeddings);
}

/// Loads <dir>/<model_id>.emb for every model, each required to have `rows` rows.
std::vector<Matrix> load_model_embeddings(const fs::path& dir, const std::vector<std::string>& model_ids,
                                          std::size_t rows) {
    std::vector<Issue> issues;
    std::vector<Matrix> out;
    for (const auto& id : model_ids) {
        const fs::path path = dir / (id + ".emb");
        if (!fs::exists(path)) {
            issues.push_back({path.string(), 0, "missing embeddings for model " + id});
            continue;
        }
        Matrix m = read_embeddings(path);
        if (static_cast<std::size_t>(m.rows()) != rows) {
            issues.push_back({path.string(), 0,
                              "expected " + std::to_string(rows) + " rows, found " + std::to_string(m.rows())});
            continue;
        }
        out.push_back(std::move(m));
    }
    if (!issues.empty()) {
        const std::string message = "model embeddings: " + issues.front().file + ": " + issues.front().message;
        throw ValidationError(message, std::move(issues));
    }
    return out;
}

template <class F>
void parallel_for(std::size_t n, std::size_t jobs, F&& fn) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    };
    const std::size_t threads = std::min(jobs, n);
    if (threads <= 1) {
        worker();
        return;
    }
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
}

struct SweepCell {
    std::uint64_t seed = 0;
    double lambda = 0.0;
    std::size_t k = 0;
    std::size_t n_ids = 0;
    double rho = std::numeric_limits<double>::quiet_NaN();
    double tau = std::numeric_limits<double>::quiet_NaN();
    double fid = std::numeric_limits<double>::quiet_NaN();
    double v_gap = std::numeric_limits<double>::quiet_NaN();
    bool ok = false;
    std::string message;
};

template <class Body>
void run_cell(SweepCell& cell, Body&& body) {
    try {
        body();
        cell.ok = true;
    } catch (const std::exception& e) {
        cell.message = e.what();
    }
}

struct ContextSlot {
    std::optional<SearchContext> context;
    std::string error;
};

}  // namespace

void StepLog::record(const std::string& step, double seconds) {
    err_ << "[" << command_ << "] " << step << ": " << fmt(std::round(seconds * 1000.0) / 1000.0) << " s\n";
}

int cmd_search(const RunConfig& config, std::ostream& out, StepLog& log) {
    config.search.validate();
    Stopwatch clock;
    const FeaturePool pool = load_configured_pool(config);
    const FeaturePool target = load_configured_target(config);
    log.record("load", clock.lap());

    const SearchContext context = prepare_search(pool, config.search.k, config.search.seed, config.search.max_iters);
    log.record("cluster", clock.lap());
    const ProxySet proxy = search_proxy(context, pool, target, config.search);
    log.record("search", clock.lap());

    const json prov = provenance(config, "search");
    write_file(config.out / "proxy.jsonl", json{{"provenance", prov}}.dump() + "\n" + proxy_jsonl(proxy));
    write_file(config.out / "proxy_summary.json", with_provenance(proxy_summary_json(proxy, pool), prov));
    write_config_echo(config, "search");
    log.record("write", clock.lap());

    out << "proxy: " << proxy.identity_ids.size() << " identities, " << proxy.records.size() << " images -> "
        << (config.out / "proxy.jsonl").string() << "\n";
    return kOk;
}

int cmd_eval(const RunConfig& config, std::ostream& out, StepLog& log) {
    const auto& ev = config.eval;
    if (ev.accuracy_csv.empty()) throw ValidationError("eval.accuracy_csv is required");
    Stopwatch clock;
    AccuracyTable table = read_accuracy_csv(ev.accuracy_csv);
    table.column_index(ev.reference_column);  // fails early on a missing reference
    json extra = json::object();

    if (ev.model_dir.empty()) {
        extra["mode"] = "table";
    } else {
        extra["mode"] = "embedding";
        if (ev.proxy.empty()) throw ValidationError("eval.proxy is required in embedding mode");
        const auto records =
            ev.proxy.extension() == ".jsonl" ? read_proxy_jsonl(ev.proxy) : read_manifest(ev.proxy);
        const auto models = load_model_embeddings(ev.model_dir, table.model_ids, records.size());
        log.record("load", clock.lap());

        std::vector<double> scores;
        auto& per_model = extra["proxy_scores"] = json::array();
        for (std::size_t m = 0; m < models.size(); ++m) {
            const ReidResult r = reid_eval(models[m], records);
            scores.push_back(r.mean_ap);
            json cmc = json::object();
            for (std::size_t i = 0; i < r.ranks.size(); ++i) cmc["rank" + std::to_string(r.ranks[i])] = r.cmc[i];
            per_model.push_back(
                {{"model_id", table.model_ids[m]}, {"mean_ap", r.mean_ap}, {"cmc", cmc}, {"queries", r.queries}});
        }
        table.set_column(ev.proxy_column, scores);
        log.record("reid_eval", clock.lap());
    }

    const QualityReport report = proxy_quality(table, ev.proxy_column, ev.reference_column, ev.permutations, config.seed);
    log.record("correlate", clock.lap());

    json j = json::parse(quality_report_json(report));
    j.update(extra);
    j["provenance"] = provenance(config, "eval");
    write_file(config.out / "quality.json", j.dump(2) + "\n");
    write_config_echo(config, "eval");
    out << "rho " << fmt(report.spearman_rho) << " tau " << fmt(report.kendall_tau) << " over " << report.models
        << " models -> " << (config.out / "quality.json").string() << "\n";
    return kOk;
}

int cmd_sweep(const RunConfig& config, std::ostream& out, StepLog& log) {
    const auto& sw = config.sweep;
    const bool synth = sw.backend == "synth";
    const std::vector<double>& lambdas = sw.lambdas;
    const std::vector<std::size_t> ks =
        !sw.ks.empty() ? sw.ks : std::vector<std::size_t>{synth ? config.synth.grid.k : config.search.k};
    const std::vector<std::size_t> ns = !sw.n_ids.empty()
                                            ? sw.n_ids
                                            : std::vector<std::size_t>{synth ? config.synth.grid.n_identities
                                                                             : config.search.n_identities};
    const std::vector<std::uint64_t> seeds = !sw.seeds.empty() ? sw.seeds : std::vector<std::uint64_t>{config.seed};
    if (lambdas.empty()) throw ValidationError("sweep.lambdas is empty");
    Stopwatch clock;

    // Per-seed inputs. The data backend shares one pool/target across seeds.
    struct World {
        FeaturePool pool;
        FeaturePool target;
        GaussianSummary target_summary;
        std::optional<SynthWorld> synth;
        std::vector<Matrix> models;
        std::vector<double> reference;
    };
    std::vector<World> worlds;
    if (synth) {
        for (auto seed : seeds) {
            SynthSpec spec = config.synth.spec;
            spec.seed = seed;
            World w;
            w.synth = gen_world(spec);
            w.target_summary = summarize(w.synth->target.matrix);
            worlds.push_back(std::move(w));
        }
    } else {
        if (sw.model_dir.empty() || config.eval.accuracy_csv.empty()) {
            throw ValidationError("data sweep needs sweep.model_dir and eval.accuracy_csv");
        }
        World w;
        w.pool = load_configured_pool(config);
        w.target = load_configured_target(config);
        w.target_summary = summarize(w.target.matrix);
        const AccuracyTable table = read_accuracy_csv(config.eval.accuracy_csv);
        w.reference = table.column(config.eval.reference_column);
        w.models = load_model_embeddings(sw.model_dir, table.model_ids, w.pool.size());
        worlds.push_back(std::move(w));
    }
    auto world_of = [&](std::size_t s) -> const World& { return worlds[synth ? s : 0]; };
    auto pool_of = [&](std::size_t s) -> const FeaturePool& {
        return synth ? world_of(s).synth->pool : world_of(s).pool;
    };
    auto target_of = [&](std::size_t s) -> const FeaturePool& {
        return synth ? world_of(s).synth->target : world_of(s).target;
    };
    log.record("load", clock.lap());

    std::vector<ContextSlot> contexts(seeds.size() * ks.size());
    parallel_for(contexts.size(), config.jobs, [&](std::size_t i) {
        const std::size_t s = i / ks.size();
        try {
            contexts[i].context = prepare_search(pool_of(s), ks[i % ks.size()], seeds[s], config.search.max_iters);
        } catch (const std::exception& e) {
            contexts[i].error = e.what();
        }
    });
    log.record("cluster", clock.lap());

    std::vector<SweepCell> cells;
    std::vector<std::size_t> cell_seed;
    std::vector<std::size_t> cell_context;
    for (std::size_t s = 0; s < seeds.size(); ++s)
        for (double lambda : lambdas)
            for (std::size_t ki = 0; ki < ks.size(); ++ki)
                for (std::size_t n : ns) {
                    SweepCell cell;
                    cell.seed = seeds[s];
                    cell.lambda = lambda;
                    cell.k = ks[ki];
                    cell.n_ids = n;
                    cells.push_back(cell);
                    cell_seed.push_back(s);
                    cell_context.push_back(s * ks.size() + ki);
                }

    parallel_for(cells.size(), config.jobs, [&](std::size_t i) {
        SweepCell& cell = cells[i];
        const std::size_t s = cell_seed[i];
        const ContextSlot& slot = contexts[cell_context[i]];
        run_cell(cell, [&] {
            if (!slot.context) throw ValidationError(slot.error);
            SearchParams params = config.search;
            params.lambda = cell.lambda;
            params.k = cell.k;
            params.n_identities = cell.n_ids;
            params.seed = cell.seed;
            const World& w = world_of(s);
            const ProxySet proxy = search_proxy(*slot.context, pool_of(s), target_of(s), params);
            if (synth) {
                const TrendRow row = evaluate_candidate(*w.synth, w.target_summary, proxy.rows);
                cell.rho = row.rho;
                cell.tau = row.tau;
                cell.fid = row.fid;
                cell.v_gap = row.v_gap;
                return;
            }
            const Matrix features = w.pool.gather(proxy.rows);
            cell.fid = fid(summarize(features), w.target_summary);
            cell.v_gap = v_gap(features, w.target.matrix);
            std::vector<double> scores;
            for (const auto& model : w.models) {
                Matrix rows(static_cast<Eigen::Index>(proxy.rows.size()), model.cols());
                for (std::size_t r = 0; r < proxy.rows.size(); ++r)
                    rows.row(static_cast<Eigen::Index>(r)) = model.row(static_cast<Eigen::Index>(proxy.rows[r]));
                scores.push_back(reid_eval(rows, proxy.records).mean_ap);
            }
            cell.rho = spearman(scores, w.reference);
            cell.tau = kendall_tau_b(scores, w.reference);
        });
    });
    log.record("cells", clock.lap());

    const json prov = provenance(config, "sweep");
    std::string csv = provenance_comment(prov) + "seed,lambda,k,n_ids,rho,tau,fid,v_gap,status,message\n";
    std::size_t succeeded = 0;
    json best = json::object();
    for (const auto& c : cells) {
        csv += std::to_string(c.seed) + "," + fmt(c.lambda) + "," + std::to_string(c.k) + "," +
               std::to_string(c.n_ids) + "," + fmt(c.rho) + "," + fmt(c.tau) + "," + fmt(c.fid) + "," +
               fmt(c.v_gap) + "," + (c.ok ? "ok" : "error") + "," + csv_field(c.message) + "\n";
        if (!c.ok) continue;
        ++succeeded;
        const std::string key = std::to_string(c.seed);
        if (!best.contains(key) || c.rho > best[key]["rho"].get<double>()) {
            best[key] = {{"lambda", c.lambda}, {"k", c.k}, {"n_ids", c.n_ids}, {"rho", c.rho}, {"tau", c.tau}};
        }
    }
    json summary{{"backend", sw.backend},
                 {"cells", cells.size()},
                 {"succeeded", succeeded},
                 {"failed", cells.size() - succeeded},
                 {"best_by_seed", best},
                 {"provenance", prov}};
    write_file(config.out / "sweep.csv", csv);
    write_file(config.out / "sweep_summary.json", summary.dump(2) + "\n");
    write_config_echo(config, "sweep");
    log.record("write", clock.lap());

    out << "sweep: " << succeeded << "/" << cells.size() << " cells ok -> " << (config.out / "sweep.csv").string()
        << "\n";
    if (succeeded == 0) {
        throw ValidationError("every sweep cell failed; first error: " + (cells.empty() ? "" : cells.front().message));
    }
    return kOk;
}

int cmd_synth(const RunConfig& config, std::ostream& out, StepLog& log) {
    Stopwatch clock;
    const SynthWorld world = gen_world(config.synth.spec);
    log.record("generate", clock.lap());
    const TrendReport report = run_trend(world, config.synth.grid);
    log.record("trend", clock.lap());

    const json prov = provenance(config, "synth");
    write_file(config.out / "trend.csv", provenance_comment(prov) + trend_csv(report));
    write_file(config.out / "trend_summary.json", with_provenance(trend_summary_json(report), prov));
    if (config.synth.export_world) {
        export_world(world, config.out / "world");
        write_file(config.out / "world" / "provenance.json", json{{"provenance", prov}}.dump(2) + "\n");
    }
    write_config_echo(config, "synth");
    log.record("write", clock.lap());

    out << "synth: " << report.rows.size() << " proxies, pearson(fid, rho) " << fmt(report.pearson_fid_rho) << " -> "
        << (config.out / "trend.csv").string() << "\n";
    return kOk;
}

int cmd_validate(const RunConfig& config, std::ostream& out, StepLog& log) {
    const bool has_target = !config.target_manifest.empty() || !config.target_embeddings.empty();
    if (config.pool_manifests.empty() && !has_target) {
        throw ValidationError("nothing to validate: set pool.manifests and/or target.manifest");
    }
    Stopwatch clock;
    json report{{"status", "ok"}};
    if (!config.pool_manifests.empty()) {
        const FeaturePool pool = load_configured_pool(config);
        report["pool"] = {{"rows", pool.size()},
                          {"dims", pool.dims()},
                          {"datasets", pool.datasets},
                          {"identities", id_average(pool).identity_ids.size()},
                          {"has_cameras", pool.has_cameras()}};
    }
    if (has_target) {
        const FeaturePool target = load_configured_target(config);
        report["target"] = {{"rows", target.size()}, {"dims", target.dims()}, {"has_cameras", target.has_cameras()}};
        if (report.contains("pool") && report["pool"]["dims"] != report["target"]["dims"]) {
            throw ValidationError("pool and target feature dimensions differ");
        }
    }
    log.record("load", clock.lap());
    report["provenance"] = provenance(config, "validate");
    out << report.dump(2) << "\n";
    return kOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Proxy-set search and proxy-quality evaluation", "proxyset"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    using Handler = int (*)(const RunConfig&, std::ostream&, StepLog&);
    struct Command {
        const char* name;
        const char* help;
        Handler handler;
        const char* lambda_key;
        const char* k_key;
        const char* n_key;
        bool writes_out;
    };
    const Command commands[] = {
        {"search", "Search a proxy set for an unlabeled target", cmd_search, "search.lambda", "search.k",
         "search.n_ids", true},
        {"eval", "Correlate proxy and reference model rankings", cmd_eval, "search.lambda", "search.k",
         "search.n_ids", true},
        {"sweep", "Grid over lambda, K and N", cmd_sweep, "sweep.lambdas", "sweep.ks", "sweep.n_ids", true},
        {"synth", "Synthetic-domain trend benchmark", cmd_synth, "synth.reference_lambda", "synth.k", "synth.n_ids",
         true},
        {"validate", "Check pool/target files and report issues", cmd_validate, "search.lambda", "search.k",
         "search.n_ids", false},
    };

    struct Parsed {
        std::string config_path;
        std::map<std::string, std::string> dotted;
        std::string lambda, k, n_ids;
        CLI::Option* lambda_opt = nullptr;
        CLI::Option* k_opt = nullptr;
        CLI::Option* n_opt = nullptr;
        CLI::Option* camera_opt = nullptr;
        std::vector<std::pair<std::string, CLI::Option*>> dotted_opts;
    };
    std::vector<Parsed> parsed(std::size(commands));
    std::vector<CLI::App*> subs;
    for (std::size_t c = 0; c < std::size(commands); ++c) {
        auto* sub = app.add_subcommand(commands[c].name, commands[c].help);
        auto& p = parsed[c];
        sub->add_option("--config", p.config_path, "JSON config file");
        p.lambda_opt = sub->add_option("--lambda", p.lambda, std::string("Alias of --") + commands[c].lambda_key);
        p.k_opt = sub->add_option("--k", p.k, std::string("Alias of --") + commands[c].k_key);
        p.n_opt = sub->add_option("--n-ids", p.n_ids, std::string("Alias of --") + commands[c].n_key);
        p.camera_opt = sub->add_flag("--camera-aware", "Alias of --search.camera_aware=true");
        for (const auto& field : config_fields()) {
            auto* opt = sub->add_option("--" + field.name, p.dotted[field.name], field.help);
            p.dotted_opts.emplace_back(field.name, opt);
        }
        subs.push_back(sub);
    }

    std::vector<const char*> argv{"proxyset"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kOk : kValidation;
    }

    std::size_t c = 0;
    while (!subs[c]->parsed()) ++c;
    const Command& command = commands[c];
    const Parsed& p = parsed[c];
    StepLog log(err, command.name);

    std::optional<RunConfig> config;
    try {
        std::map<std::string, std::string> overrides;
        if (p.lambda_opt->count()) overrides[command.lambda_key] = p.lambda;
        if (p.k_opt->count()) overrides[command.k_key] = p.k;
        if (p.n_opt->count()) overrides[command.n_key] = p.n_ids;
        if (p.camera_opt->count()) overrides["search.camera_aware"] = "true";
        for (const auto& [name, opt] : p.dotted_opts)
            if (opt->count()) overrides[name] = p.dotted.at(name);
        const json file = p.config_path.empty() ? json::object() : read_config_file(p.config_path);
        config = to_run_config(merge_config(file, overrides));
        return command.handler(*config, out, log);
    } catch (const std::exception& e) {
        int code = kValidation;
        json report;
        if (const auto* v = dynamic_cast<const ValidationError*>(&e)) {
            report = json::parse(validation_report_json(*v));
            report["kind"] = "validation";
        } else {
            if (dynamic_cast<const NumericalError*>(&e)) code = kNumerical;
            report = {{"status", "failed"},
                      {"kind", code == kNumerical ? "numerical" : "error"},
                      {"message", e.what()},
                      {"issue_count", 0},
                      {"issues", json::array()}};
        }
        if (config) report["provenance"] = provenance(*config, command.name);
        err << "proxyset " << command.name << ": error: " << e.what() << "\n";
        out << report.dump(2) << "\n";
        if (config && command.writes_out) {
            try {
                write_file(config->out / "error.json", report.dump(2) + "\n");
            } catch (const std::exception&) {
                // the report already went to stdout
            }
        }
        return code;
    }
}

}  // namespace proxyset::app
