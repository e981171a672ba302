#include "proxyset/corpus.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "csv.hpp"

namespace proxyset {
namespace {

constexpr std::array<char, 4> kMagic = {'E', 'M', 'B', '1'};
constexpr std::size_t kMaxReportedIssues = 20;
constexpr const char* kManifestHeader = "image_id,identity_id,dataset_name,camera_id,row_index";

std::uint32_t decode_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void encode_u32(std::uint32_t v, char* p) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
}

template <typename T>
bool parse_integer(std::string_view text, T& out) {
    if (text.empty()) return false;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    return ec == std::errc() && ptr == text.data() + text.size();
}

// Reads one EMB1 file, appending problems to `issues` instead of throwing.
std::optional<Matrix> read_embeddings_into(const std::filesystem::path& path,
                                           std::vector<Issue>& issues) {
    const std::string name = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        issues.push_back({name, 0, "cannot open embedding file"});
        return std::nullopt;
    }
    std::array<unsigned char, 12> header{};
    in.read(reinterpret_cast<char*>(header.data()), header.size());
    if (in.gcount() != static_cast<std::streamsize>(header.size()) ||
        !std::equal(kMagic.begin(), kMagic.end(), header.begin(),
                    [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; })) {
        issues.push_back({name, 0, "missing EMB1 header"});
        return std::nullopt;
    }
    const std::uint32_t rows = decode_u32(header.data() + 4);
    const std::uint32_t dims = decode_u32(header.data() + 8);
    if (dims == 0) {
        issues.push_back({name, 0, "embedding dims is zero"});
        return std::nullopt;
    }

    const std::size_t count = static_cast<std::size_t>(rows) * dims;
    std::vector<unsigned char> payload(count * 4);
    in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (in.gcount() != static_cast<std::streamsize>(payload.size())) {
        issues.push_back({name, 0, "truncated embedding payload"});
        return std::nullopt;
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        issues.push_back({name, 0, "trailing bytes after embedding payload"});
        return std::nullopt;
    }

    Matrix m(rows, dims);
    bool ok = true;
    for (std::uint32_t r = 0; r < rows; ++r) {
        bool row_finite = true;
        for (std::uint32_t c = 0; c < dims; ++c) {
            const std::size_t idx = static_cast<std::size_t>(r) * dims + c;
            const float v = std::bit_cast<float>(decode_u32(payload.data() + idx * 4));
            row_finite = row_finite && std::isfinite(v);
            m(r, c) = static_cast<double>(v);
        }
        if (!row_finite) {
            issues.push_back({name, static_cast<std::size_t>(r) + 1, "non-finite value in embeddings"});
            ok = false;
        }
    }
    if (!ok) return std::nullopt;
    return m;
}

std::optional<std::vector<ImageRecord>> read_manifest_into(const std::filesystem::path& path,
                                                           std::vector<Issue>& issues) {
    const std::string name = path.string();
    std::ifstream in(path);
    if (!in) {
        issues.push_back({name, 0, "cannot open manifest"});
        return std::nullopt;
    }
    std::string line;
    if (!std::getline(in, line)) {
        issues.push_back({name, 1, "empty manifest"});
        return std::nullopt;
    }
    csv::normalize_line(line, true);
    if (line != kManifestHeader) {
        issues.push_back({name, 1, std::string("bad header, expected '") + kManifestHeader + "'"});
        return std::nullopt;
    }

    std::vector<ImageRecord> records;
    const std::size_t before = issues.size();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        csv::normalize_line(line, false);
        if (line.empty()) continue;
        std::vector<std::string> fields;
        try {
            fields = csv::split_line(line);
        } catch (const std::invalid_argument& e) {
            issues.push_back({name, line_no, e.what()});
            continue;
        }
        if (fields.size() != 5) {
            issues.push_back({name, line_no, "expected 5 fields, got " + std::to_string(fields.size())});
            continue;
        }
        ImageRecord rec;
        rec.image_id = fields[0];
        rec.identity_id = fields[1];
        rec.dataset_name = fields[2];
        if (rec.image_id.empty()) {
            issues.push_back({name, line_no, "empty image_id"});
            continue;
        }
        if (!fields[3].empty()) {
            int cam = 0;
            if (!parse_integer(fields[3], cam) || cam < 0) {
                issues.push_back({name, line_no, "camera_id is not a nonnegative integer"});
                continue;
            }
            rec.camera_id = cam;
        }
        if (!parse_integer(fields[4], rec.row_index)) {
            issues.push_back({name, line_no, "row_index is not a nonnegative integer"});
            continue;
        }
        records.push_back(std::move(rec));
    }
    if (issues.size() != before) return std::nullopt;
    return records;
}

struct LoadOptions {
    bool require_identity = true;
};

FeaturePool load_impl(std::span<const std::filesystem::path> manifests,
                      std::span<const std::filesystem::path> embeddings, const LoadOptions& opts) {
    if (manifests.size() != embeddings.size()) {
        throw ValidationError("manifest/embedding count mismatch: " + std::to_string(manifests.size()) +
                              " vs " + std::to_string(embeddings.size()));
    }
    if (manifests.empty()) throw ValidationError("no input files");

    std::vector<Issue> issues;
    std::vector<std::vector<ImageRecord>> all_records(manifests.size());
    std::vector<Matrix> all_matrices(manifests.size());
    std::optional<std::size_t> dims;
    std::unordered_set<std::string> seen_ids;

    for (std::size_t f = 0; f < manifests.size(); ++f) {
        auto matrix = read_embeddings_into(embeddings[f], issues);
        auto records = read_manifest_into(manifests[f], issues);
        if (!matrix || !records) continue;

        const auto cols = static_cast<std::size_t>(matrix->cols());
        if (!dims) {
            dims = cols;
        } else if (*dims != cols) {
            issues.push_back({embeddings[f].string(), 0,
                              "dimension mismatch: " + std::to_string(cols) + " vs " + std::to_string(*dims)});
            continue;
        }

        const std::string mname = manifests[f].string();
        std::vector<bool> used(static_cast<std::size_t>(matrix->rows()), false);
        for (std::size_t i = 0; i < records->size(); ++i) {
            const auto& rec = (*records)[i];
            const std::size_t line = i + 2;
            if (rec.row_index >= static_cast<std::size_t>(matrix->rows())) {
                issues.push_back({mname, line, "row out of range: " + std::to_string(rec.row_index)});
                continue;
            }
            if (used[rec.row_index]) {
                issues.push_back({mname, line, "row referenced twice: " + std::to_string(rec.row_index)});
            }
            used[rec.row_index] = true;
            if (!seen_ids.insert(rec.image_id).second) {
                issues.push_back({mname, line, "duplicate image_id: " + rec.image_id});
            }
            if (opts.require_identity && rec.identity_id.empty()) {
                issues.push_back({mname, line, "empty identity_id"});
            }
        }
        all_matrices[f] = std::move(*matrix);
        all_records[f] = std::move(*records);
    }

    if (!issues.empty()) {
        const std::string message = "input validation failed (" + std::to_string(issues.size()) +
                                    " issues; first: " + issues.front().file + ":" +
                                    std::to_string(issues.front().line) + ": " + issues.front().message + ")";
        throw ValidationError(message, std::move(issues));
    }

    std::size_t total = 0;
    for (const auto& r : all_records) total += r.size();

    FeaturePool pool;
    pool.matrix.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(*dims));
    pool.records.reserve(total);
    std::unordered_set<std::string> dataset_seen;
    std::size_t out_row = 0;
    for (std::size_t f = 0; f < all_records.size(); ++f) {
        for (auto& rec : all_records[f]) {
            pool.matrix.row(static_cast<Eigen::Index>(out_row)) =
                all_matrices[f].row(static_cast<Eigen::Index>(rec.row_index));
            rec.row_index = out_row++;
            if (!opts.require_identity && rec.identity_id.empty()) rec.identity_id = "?";
            if (dataset_seen.insert(rec.dataset_name).second) pool.datasets.push_back(rec.dataset_name);
            pool.records.push_back(std::move(rec));
        }
    }
    return pool;
}

}  // namespace

std::string identity_key(const ImageRecord& record) {
    return record.dataset_name + "::" + record.identity_id;
}

bool FeaturePool::has_cameras() const noexcept {
    return !records.empty() &&
           std::all_of(records.begin(), records.end(), [](const ImageRecord& r) { return r.camera_id.has_value(); });
}

Matrix FeaturePool::gather(std::span<const std::size_t> rows) const {
    Matrix out(static_cast<Eigen::Index>(rows.size()), matrix.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = matrix.row(static_cast<Eigen::Index>(rows[i]));
    }
    return out;
}

Matrix read_embeddings(const std::filesystem::path& path) {
    std::vector<Issue> issues;
    auto m = read_embeddings_into(path, issues);
    if (!m) {
        const std::string message = path.string() + ": " + issues.front().message;
        throw ValidationError(message, std::move(issues));
    }
    return std::move(*m);
}

void write_embeddings(const std::filesystem::path& path, const MatrixView& matrix) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write embedding file: " + path.string());
    std::array<char, 12> header{};
    std::copy(kMagic.begin(), kMagic.end(), header.begin());
    encode_u32(static_cast<std::uint32_t>(matrix.rows()), header.data() + 4);
    encode_u32(static_cast<std::uint32_t>(matrix.cols()), header.data() + 8);
    out.write(header.data(), header.size());

    std::vector<char> payload(static_cast<std::size_t>(matrix.size()) * 4);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < matrix.rows(); ++r) {
        for (Eigen::Index c = 0; c < matrix.cols(); ++c) {
            encode_u32(std::bit_cast<std::uint32_t>(static_cast<float>(matrix(r, c))), payload.data() + 4 * k++);
        }
    }
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw ValidationError("failed writing embedding file: " + path.string());
}

std::vector<ImageRecord> read_manifest(const std::filesystem::path& path) {
    std::vector<Issue> issues;
    auto records = read_manifest_into(path, issues);
    if (!records) {
        const std::string message = path.string() + ": " + issues.front().message;
        throw ValidationError(message, std::move(issues));
    }
    return std::move(*records);
}

void write_manifest(const std::filesystem::path& path, std::span<const ImageRecord> records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot write manifest: " + path.string());
    out << kManifestHeader << '\n';
    for (const auto& r : records) {
        out << csv::join({r.image_id, r.identity_id, r.dataset_name,
                          r.camera_id ? std::to_string(*r.camera_id) : std::string(),
                          std::to_string(r.row_index)})
            << '\n';
    }
    if (!out) throw ValidationError("failed writing manifest: " + path.string());
}

FeaturePool load_pool(std::span<const std::filesystem::path> manifests,
                      std::span<const std::filesystem::path> embeddings) {
    return load_impl(manifests, embeddings, LoadOptions{.require_identity = true});
}

FeaturePool load_target(const std::filesystem::path& manifest, const std::filesystem::path& embeddings) {
    const std::filesystem::path m[] = {manifest};
    const std::filesystem::path e[] = {embeddings};
    return load_impl(m, e, LoadOptions{.require_identity = false});
}

IdFeatureTable id_average(const FeaturePool& pool) {
    if (pool.size() == 0) throw ValidationError("id_average: empty pool");

    IdFeatureTable table;
    std::unordered_map<std::string, std::size_t> slot;
    std::vector<std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < pool.records.size(); ++i) {
        auto key = identity_key(pool.records[i]);
        auto [it, inserted] = slot.try_emplace(key, table.identity_ids.size());
        if (inserted) {
            table.identity_ids.push_back(std::move(key));
            members.emplace_back();
        }
        members[it->second].push_back(pool.records[i].row_index);
    }

    table.features = Matrix::Zero(static_cast<Eigen::Index>(members.size()), pool.matrix.cols());
    table.image_counts.resize(members.size());
    for (std::size_t id = 0; id < members.size(); ++id) {
        auto row = table.features.row(static_cast<Eigen::Index>(id));
        for (std::size_t r : members[id]) row += pool.matrix.row(static_cast<Eigen::Index>(r));
        row /= static_cast<double>(members[id].size());
        table.image_counts[id] = members[id].size();
    }
    return table;
}

std::string validation_report_json(const ValidationError& error) {
    nlohmann::json report;
    report["status"] = "invalid";
    report["message"] = error.what();
    report["issue_count"] = error.issues().size();
    auto& rows = report["issues"] = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min(error.issues().size(), kMaxReportedIssues); ++i) {
        const auto& issue = error.issues()[i];
        rows.push_back({{"file", issue.file}, {"line", issue.line}, {"message", issue.message}});
    }
    return report.dump(2);
}

}  // namespace proxyset
