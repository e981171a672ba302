#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "proxyset/corpus.hpp"
#include "proxyset/types.hpp"

namespace proxyset::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
}

/// B^T B for a random square B: symmetric PSD, full rank with probability one.
inline Eigen::MatrixXd random_psd(Eigen::Index d, std::mt19937_64& rng) {
    const Matrix b = random_matrix(d, d, rng);
    Eigen::MatrixXd a = b.transpose() * b;
    return (0.5 * (a + a.transpose())).eval();
}

/// In-memory pool assembled image by image.
class PoolBuilder {
public:
    explicit PoolBuilder(Eigen::Index dims) : dims_(dims) {}

    PoolBuilder& add(const std::string& dataset, const std::string& identity, std::optional<int> camera,
                     const Eigen::RowVectorXd& feature, std::string image_id = {}) {
        ImageRecord r;
        r.dataset_name = dataset;
        r.identity_id = identity;
        r.camera_id = camera;
        r.row_index = rows_.size();
        r.image_id = image_id.empty() ? dataset + "_" + identity + "_" + std::to_string(r.row_index) : image_id;
        records_.push_back(r);
        rows_.push_back(feature);
        return *this;
    }

    FeaturePool build() const {
        FeaturePool pool;
        pool.matrix.resize(static_cast<Eigen::Index>(rows_.size()), dims_);
        for (std::size_t i = 0; i < rows_.size(); ++i) pool.matrix.row(static_cast<Eigen::Index>(i)) = rows_[i];
        pool.records = records_;
        for (const auto& r : records_)
            if (std::find(pool.datasets.begin(), pool.datasets.end(), r.dataset_name) == pool.datasets.end())
                pool.datasets.push_back(r.dataset_name);
        return pool;
    }

private:
    Eigen::Index dims_;
    std::vector<ImageRecord> records_;
    std::vector<Eigen::RowVectorXd> rows_;
};

/// Gaussian blobs: `datasets` datasets, each with `identities` identities of
/// `images` images, dataset means `spread` apart on average.
inline FeaturePool blob_pool(std::size_t datasets, std::size_t identities, std::size_t images, Eigen::Index dims,
                             std::uint64_t seed, double spread = 4.0, int cameras = 3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    PoolBuilder builder(dims);
    for (std::size_t d = 0; d < datasets; ++d) {
        Eigen::RowVectorXd mean(dims);
        for (Eigen::Index c = 0; c < dims; ++c) mean(c) = spread * normal(rng);
        for (std::size_t id = 0; id < identities; ++id) {
            Eigen::RowVectorXd center(dims);
            for (Eigen::Index c = 0; c < dims; ++c) center(c) = mean(c) + normal(rng);
            for (std::size_t img = 0; img < images; ++img) {
                Eigen::RowVectorXd x(dims);
                for (Eigen::Index c = 0; c < dims; ++c) x(c) = center(c) + 0.5 * normal(rng);
                builder.add("ds" + std::to_string(d), "p" + std::to_string(id),
                            static_cast<int>((id + img) % static_cast<std::size_t>(cameras)), x);
            }
        }
    }
    return builder.build();
}

/// Unlabeled target drawn around `center` with the given camera count (0: no cameras).
inline FeaturePool blob_target(std::size_t rows, const Eigen::RowVectorXd& center, std::uint64_t seed,
                               int cameras = 3) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    PoolBuilder builder(center.size());
    for (std::size_t i = 0; i < rows; ++i) {
        Eigen::RowVectorXd x(center.size());
        for (Eigen::Index c = 0; c < center.size(); ++c) x(c) = center(c) + normal(rng);
        std::optional<int> cam;
        if (cameras > 0) cam = static_cast<int>(i % static_cast<std::size_t>(cameras));
        builder.add("target", "?", cam, x, "t" + std::to_string(i));
    }
    return builder.build();
}

/// Unique scratch directory, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("proxyset_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes a pool as one manifest/embedding pair per dataset, returning the paths.
inline std::pair<std::vector<std::filesystem::path>, std::vector<std::filesystem::path>> write_pool_files(
    const FeaturePool& pool, const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> manifests;
    std::vector<std::filesystem::path> embeddings;
    for (const auto& name : pool.datasets) {
        std::vector<ImageRecord> records;
        std::vector<std::size_t> rows;
        for (const auto& r : pool.records) {
            if (r.dataset_name != name) continue;
            ImageRecord local = r;
            local.row_index = records.size();
            records.push_back(local);
            rows.push_back(r.row_index);
        }
        manifests.push_back(dir / (name + ".csv"));
        embeddings.push_back(dir / (name + ".emb"));
        write_manifest(manifests.back(), records);
        write_embeddings(embeddings.back(), pool.gather(rows));
    }
    return {manifests, embeddings};
}

}  // namespace proxyset::testing
