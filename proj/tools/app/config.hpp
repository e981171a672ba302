#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "proxyset/search.hpp"
#include "proxyset/synthbench.hpp"

namespace proxyset::app {

enum class FieldType { count, real, boolean, text, path, real_list, count_list, path_list };

/// One config leaf, addressed by its dotted name ("search.lambda").
struct Field {
    std::string name;
    FieldType type;
    std::string help;
    nlohmann::json fallback;
};

const std::vector<Field>& config_fields();
const Field* find_field(const std::string& name);

/// Nested JSON holding every field at its default.
nlohmann::json default_config();

/// Parses a config file; unknown keys and mistyped values are validation errors.
/// Relative paths are resolved against the file's directory.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Converts a command-line string to the field's JSON type. Lists are comma separated.
nlohmann::json parse_flag_value(const Field& field, const std::string& raw);

/// flag > file > default. `overrides` maps dotted names to raw flag strings.
nlohmann::json merge_config(const nlohmann::json& file, const std::map<std::string, std::string>& overrides);

nlohmann::json& config_at(nlohmann::json& config, const std::string& dotted);
const nlohmann::json& config_at(const nlohmann::json& config, const std::string& dotted);

struct EvalConfig {
    std::filesystem::path accuracy_csv;
    std::string proxy_column;
    std::string reference_column;
    std::filesystem::path proxy;      // proxy JSONL or manifest (embedding mode)
    std::filesystem::path model_dir;  // <model_id>.emb rows aligned with the proxy
    std::size_t permutations = 999;
};

struct SweepConfig {
    std::string backend;  // data | synth
    std::vector<double> lambdas;
    std::vector<std::size_t> ks;      // empty: search.k or synth.k
    std::vector<std::size_t> n_ids;   // empty: search.n_ids or synth.n_ids
    std::vector<std::uint64_t> seeds; // empty: the run seed
    std::filesystem::path model_dir;  // <model_id>.emb rows aligned with the pool
};

struct SynthConfig {
    SynthSpec spec;
    TrendGrid grid;
    bool export_world = false;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::filesystem::path out;
    std::size_t jobs = 1;
    std::vector<std::filesystem::path> pool_manifests;
    std::vector<std::filesystem::path> pool_embeddings;
    std::filesystem::path target_manifest;
    std::filesystem::path target_embeddings;
    SearchParams search;
    EvalConfig eval;
    SweepConfig sweep;
    SynthConfig synth;

    nlohmann::json effective;  // merged config as JSON
    std::string hash;          // of `effective`, minus out and jobs
};

RunConfig to_run_config(const nlohmann::json& effective);

/// FNV-1a 64 over the canonical dump of every result-affecting field.
std::string config_hash(const nlohmann::json& effective);

nlohmann::json provenance(const RunConfig& config, const std::string& command);

}  // namespace proxyset::app
