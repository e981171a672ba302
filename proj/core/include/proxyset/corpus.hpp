#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "proxyset/types.hpp"

namespace proxyset {

struct ImageRecord {
    std::string image_id;
    std::string identity_id;
    std::string dataset_name;
    std::optional<int> camera_id;
    std::size_t row_index = 0;
};

/// Identity namespaced by dataset so that "0001" in two datasets stays distinct.
std::string identity_key(const ImageRecord& record);

struct FeaturePool {
    Matrix matrix;
    std::vector<ImageRecord> records;
    std::vector<std::string> datasets;  // first-appearance order

    std::size_t size() const noexcept { return records.size(); }
    std::size_t dims() const noexcept { return static_cast<std::size_t>(matrix.cols()); }
    /// True when every record carries a camera id.
    bool has_cameras() const noexcept;
    Matrix gather(std::span<const std::size_t> rows) const;
};

/// ID-averaged features: row i is the mean of every pool row with identity_ids[i].
struct IdFeatureTable {
    std::vector<std::string> identity_ids;  // namespaced keys, first-appearance order
    Matrix features;
    std::vector<std::size_t> image_counts;
};

// EMB1 embedding files: "EMB1", u32 rows, u32 dims, rows*dims f32, all little-endian.
Matrix read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path, const MatrixView& matrix);

// Manifest CSV: image_id,identity_id,dataset_name,camera_id,row_index
std::vector<ImageRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ImageRecord> records);

/// Loads manifest/embedding pairs into one pool. Rows are gathered in manifest order,
/// files in the given order, and row_index is rebased to the pool row. Throws
/// ValidationError listing every offending row.
FeaturePool load_pool(std::span<const std::filesystem::path> manifests,
                      std::span<const std::filesystem::path> embeddings);

/// Same as load_pool for a single unlabeled file pair; empty identities become "?".
FeaturePool load_target(const std::filesystem::path& manifest,
                        const std::filesystem::path& embeddings);

IdFeatureTable id_average(const FeaturePool& pool);

/// JSON validation report (first 20 issues) for a failed load.
std::string validation_report_json(const ValidationError& error);

}  // namespace proxyset
