#include "config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "proxyset/types.hpp"

namespace proxyset::app {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<Field> build_fields() {
    const SearchParams search;
    const SynthSpec spec;
    const TrendGrid grid;
    return {
        {"seed", FieldType::count, "Master seed", 0},
        {"out", FieldType::path, "Output directory", "proxyset_out"},
        {"jobs", FieldType::count, "Concurrent sweep cells", 1},
        {"pool.manifests", FieldType::path_list, "Pool manifest CSVs", json::array()},
        {"pool.embeddings", FieldType::path_list, "Pool EMB1 files, one per manifest", json::array()},
        {"target.manifest", FieldType::path, "Target manifest CSV", ""},
        {"target.embeddings", FieldType::path, "Target EMB1 file", ""},
        {"search.lambda", FieldType::real, "Weight of the FID softmax", search.lambda},
        {"search.k", FieldType::count, "Number of clusters", search.k},
        {"search.n_ids", FieldType::count, "Identities to sample", search.n_identities},
        {"search.camera_aware", FieldType::boolean, "One pass per target camera", search.camera_aware},
        {"search.max_iters", FieldType::count, "k-means iteration cap", search.max_iters},
        {"search.metric", FieldType::text, "Gap metric: fid or mmd", to_string(search.metric)},
        {"search.mmd_bandwidth", FieldType::real, "MMD kernel bandwidth (<= 0: median heuristic)",
         search.mmd_bandwidth},
        {"eval.accuracy_csv", FieldType::path, "Models x datasets score table", ""},
        {"eval.proxy_column", FieldType::text, "Proxy column (table mode)", "proxy"},
        {"eval.reference_column", FieldType::text, "Reference column", "target"},
        {"eval.proxy", FieldType::path, "Proxy JSONL or manifest (embedding mode)", ""},
        {"eval.model_dir", FieldType::path, "Directory of <model_id>.emb aligned with the proxy", ""},
        {"eval.permutations", FieldType::count, "Permutations for p-values", 999},
        {"sweep.backend", FieldType::text, "data or synth", "data"},
        {"sweep.lambdas", FieldType::real_list, "Lambda grid", json(grid.lambdas)},
        {"sweep.ks", FieldType::count_list, "K grid (empty: single K)", json::array()},
        {"sweep.n_ids", FieldType::count_list, "N grid (empty: single N)", json::array()},
        {"sweep.seeds", FieldType::count_list, "Seeds (empty: the run seed)", json::array()},
        {"sweep.model_dir", FieldType::path, "Directory of <model_id>.emb aligned with the pool", ""},
        {"synth.dims", FieldType::count, "Feature dimension", spec.dims},
        {"synth.n_domains", FieldType::count, "Pool domains", spec.n_domains},
        {"synth.identities_per_domain", FieldType::count, "Identities per domain", spec.identities_per_domain},
        {"synth.images_per_identity", FieldType::count, "Images per identity", spec.images_per_identity},
        {"synth.cameras", FieldType::count, "Cameras per domain", spec.cameras},
        {"synth.domain_mean_spread", FieldType::real, "Spread of domain means", spec.domain_mean_spread},
        {"synth.within_domain_scale", FieldType::real, "Identity scatter within a domain", spec.within_domain_scale},
        {"synth.n_models", FieldType::count, "Synthetic models", spec.n_models},
        {"synth.model_noise", FieldType::real, "Per-identity accuracy noise", spec.model_noise},
        {"synth.k", FieldType::count, "Clusters for searched proxies", grid.k},
        {"synth.n_ids", FieldType::count, "Identities per random/searched proxy", grid.n_identities},
        {"synth.n_random", FieldType::count, "Random proxies", grid.n_random},
        {"synth.lambdas", FieldType::real_list, "Lambda grid for searched proxies", json(grid.lambdas)},
        {"synth.reference_lambda", FieldType::real, "Lambda compared against random proxies",
         grid.reference_lambda},
        {"synth.export", FieldType::boolean, "Also write the world as EMB1/CSV files", false},
    };
}

std::vector<std::string> split_dotted(const std::string& name) {
    std::vector<std::string> parts;
    std::stringstream ss(name);
    for (std::string part; std::getline(ss, part, '.');) parts.push_back(part);
    return parts;
}

std::vector<std::string> split_commas(const std::string& raw) {
    std::vector<std::string> parts;
    if (raw.empty()) return parts;
    std::stringstream ss(raw);
    for (std::string part; std::getline(ss, part, ',');) parts.push_back(part);
    return parts;
}

std::uint64_t parse_count(const std::string& name, const std::string& raw) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc() || ptr != raw.data() + raw.size()) {
        throw ValidationError(name + ": expected a non-negative integer, got '" + raw + "'");
    }
    return v;
}

double parse_real(const std::string& name, const std::string& raw) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(raw.data(), raw.data() + raw.size(), v);
    if (ec != std::errc() || ptr != raw.data() + raw.size() || !std::isfinite(v)) {
        throw ValidationError(name + ": expected a number, got '" + raw + "'");
    }
    return v;
}

bool is_count(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

void check_type(const Field& field, const json& v) {
    auto fail = [&](const char* expected) {
        throw ValidationError("config key '" + field.name + "': expected " + expected + ", got " + v.dump());
    };
    auto all = [&](auto pred) {
        if (!v.is_array()) return false;
        for (const auto& x : v)
            if (!pred(x)) return false;
        return true;
    };
    switch (field.type) {
        case FieldType::count:
            if (!is_count(v)) fail("a non-negative integer");
            break;
        case FieldType::real:
            if (!v.is_number()) fail("a number");
            break;
        case FieldType::boolean:
            if (!v.is_boolean()) fail("true or false");
            break;
        case FieldType::text:
        case FieldType::path:
            if (!v.is_string()) fail("a string");
            break;
        case FieldType::real_list:
            if (!all([](const json& x) { return x.is_number(); })) fail("a list of numbers");
            break;
        case FieldType::count_list:
            if (!all(is_count)) fail("a list of non-negative integers");
            break;
        case FieldType::path_list:
            if (!all([](const json& x) { return x.is_string(); })) fail("a list of strings");
            break;
    }
}

std::string resolve(const fs::path& base, const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (base / p).lexically_normal().string();
}

void flatten(const json& node, const std::string& prefix, std::vector<std::pair<std::string, json>>& out) {
    for (const auto& [key, value] : node.items()) {
        const std::string name = prefix.empty() ? key : prefix + "." + key;
        if (value.is_object()) {
            flatten(value, name, out);
        } else {
            out.emplace_back(name, value);
        }
    }
}

template <class T>
std::vector<T> as_vector(const json& v) {
    return v.get<std::vector<T>>();
}

std::vector<fs::path> as_paths(const json& v) {
    std::vector<fs::path> out;
    for (const auto& s : v) out.emplace_back(s.get<std::string>());
    return out;
}

}  // namespace

const std::vector<Field>& config_fields() {
    static const std::vector<Field> fields = build_fields();
    return fields;
}

const Field* find_field(const std::string& name) {
    for (const auto& f : config_fields())
        if (f.name == name) return &f;
    return nullptr;
}

json& config_at(json& config, const std::string& dotted) {
    json* node = &config;
    for (const auto& part : split_dotted(dotted)) node = &(*node)[part];
    return *node;
}

const json& config_at(const json& config, const std::string& dotted) {
    const json* node = &config;
    for (const auto& part : split_dotted(dotted)) node = &node->at(part);
    return *node;
}

json default_config() {
    json config = json::object();
    for (const auto& f : config_fields()) config_at(config, f.name) = f.fallback;
    return config;
}

json read_config_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file: " + path.string());
    json raw;
    try {
        raw = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("config file " + path.string() + ": " + e.what());
    }
    if (!raw.is_object()) throw ValidationError("config file " + path.string() + ": top level must be an object");

    std::vector<std::pair<std::string, json>> leaves;
    flatten(raw, "", leaves);
    const fs::path base = path.parent_path();
    json config = json::object();
    for (auto& [name, value] : leaves) {
        const Field* field = find_field(name);
        if (!field) throw ValidationError("config file " + path.string() + ": unknown key '" + name + "'");
        check_type(*field, value);
        if (field->type == FieldType::path) {
            value = resolve(base, value.get<std::string>());
        } else if (field->type == FieldType::path_list) {
            for (auto& p : value) p = resolve(base, p.get<std::string>());
        }
        config_at(config, name) = value;
    }
    return config;
}

json parse_flag_value(const Field& field, const std::string& raw) {
    switch (field.type) {
        case FieldType::count:
            return parse_count(field.name, raw);
        case FieldType::real:
            return parse_real(field.name, raw);
        case FieldType::boolean:
            if (raw == "true" || raw == "1") return true;
            if (raw == "false" || raw == "0") return false;
            throw ValidationError(field.name + ": expected true or false, got '" + raw + "'");
        case FieldType::text:
        case FieldType::path:
            return raw;
        case FieldType::real_list: {
            json list = json::array();
            for (const auto& part : split_commas(raw)) list.push_back(parse_real(field.name, part));
            return list;
        }
        case FieldType::count_list: {
            json list = json::array();
            for (const auto& part : split_commas(raw)) list.push_back(parse_count(field.name, part));
            return list;
        }
        case FieldType::path_list:
            return split_commas(raw);
    }
    return raw;
}

json merge_config(const json& file, const std::map<std::string, std::string>& overrides) {
    json config = default_config();
    config.merge_patch(file);
    for (const auto& [name, raw] : overrides) {
        const Field* field = find_field(name);
        if (!field) throw ValidationError("unknown config key '" + name + "'");
        config_at(config, name) = parse_flag_value(*field, raw);
    }
    return config;
}

RunConfig to_run_config(const json& effective) {
    RunConfig c;
    c.effective = effective;
    c.hash = config_hash(effective);
    const auto& j = effective;
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out = j.at("out").get<std::string>();
    c.jobs = j.at("jobs").get<std::size_t>();
    if (c.jobs == 0) throw ValidationError("jobs must be >= 1");

    c.pool_manifests = as_paths(config_at(j, "pool.manifests"));
    c.pool_embeddings = as_paths(config_at(j, "pool.embeddings"));
    c.target_manifest = config_at(j, "target.manifest").get<std::string>();
    c.target_embeddings = config_at(j, "target.embeddings").get<std::string>();

    c.search.lambda = config_at(j, "search.lambda").get<double>();
    c.search.k = config_at(j, "search.k").get<std::size_t>();
    c.search.n_identities = config_at(j, "search.n_ids").get<std::size_t>();
    c.search.camera_aware = config_at(j, "search.camera_aware").get<bool>();
    c.search.max_iters = config_at(j, "search.max_iters").get<std::size_t>();
    c.search.metric = parse_gap_metric(config_at(j, "search.metric").get<std::string>());
    c.search.mmd_bandwidth = config_at(j, "search.mmd_bandwidth").get<double>();
    c.search.seed = c.seed;

    c.eval.accuracy_csv = config_at(j, "eval.accuracy_csv").get<std::string>();
    c.eval.proxy_column = config_at(j, "eval.proxy_column").get<std::string>();
    c.eval.reference_column = config_at(j, "eval.reference_column").get<std::string>();
    c.eval.proxy = config_at(j, "eval.proxy").get<std::string>();
    c.eval.model_dir = config_at(j, "eval.model_dir").get<std::string>();
    c.eval.permutations = config_at(j, "eval.permutations").get<std::size_t>();

    c.sweep.backend = config_at(j, "sweep.backend").get<std::string>();
    if (c.sweep.backend != "data" && c.sweep.backend != "synth") {
        throw ValidationError("sweep.backend must be 'data' or 'synth', got '" + c.sweep.backend + "'");
    }
    c.sweep.lambdas = as_vector<double>(config_at(j, "sweep.lambdas"));
    c.sweep.ks = as_vector<std::size_t>(config_at(j, "sweep.ks"));
    c.sweep.n_ids = as_vector<std::size_t>(config_at(j, "sweep.n_ids"));
    c.sweep.seeds = as_vector<std::uint64_t>(config_at(j, "sweep.seeds"));
    c.sweep.model_dir = config_at(j, "sweep.model_dir").get<std::string>();

    auto& spec = c.synth.spec;
    spec.dims = config_at(j, "synth.dims").get<std::size_t>();
    spec.n_domains = config_at(j, "synth.n_domains").get<std::size_t>();
    spec.identities_per_domain = config_at(j, "synth.identities_per_domain").get<std::size_t>();
    spec.images_per_identity = config_at(j, "synth.images_per_identity").get<std::size_t>();
    spec.cameras = config_at(j, "synth.cameras").get<std::size_t>();
    spec.domain_mean_spread = config_at(j, "synth.domain_mean_spread").get<double>();
    spec.within_domain_scale = config_at(j, "synth.within_domain_scale").get<double>();
    spec.n_models = config_at(j, "synth.n_models").get<std::size_t>();
    spec.model_noise = config_at(j, "synth.model_noise").get<double>();
    spec.seed = c.seed;
    auto& grid = c.synth.grid;
    grid.k = config_at(j, "synth.k").get<std::size_t>();
    grid.n_identities = config_at(j, "synth.n_ids").get<std::size_t>();
    grid.n_random = config_at(j, "synth.n_random").get<std::size_t>();
    grid.lambdas = as_vector<double>(config_at(j, "synth.lambdas"));
    grid.reference_lambda = config_at(j, "synth.reference_lambda").get<double>();
    grid.seed = c.seed;
    c.synth.export_world = config_at(j, "synth.export").get<bool>();
    return c;
}

std::string config_hash(const json& effective) {
    json hashed = effective;
    hashed.erase("out");
    hashed.erase("jobs");
    const std::string text = hashed.dump();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json provenance(const RunConfig& config, const std::string& command) {
    return {{"command", command},
            {"config_hash", "fnv1a64:" + config.hash},
            {"seed", config.seed},
            {"tool_version", kVersion}};
}

}  // namespace proxyset::app
