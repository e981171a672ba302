#include <doctest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <json.hpp>

#include "fixtures.hpp"
#include "proxyset/cluster.hpp"

using namespace proxyset;
using namespace proxyset::testing;

namespace {

IdFeatureTable table_from(const Matrix& features) {
    IdFeatureTable t;
    t.features = features;
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        t.identity_ids.push_back("ds::" + std::to_string(i));
        t.image_counts.push_back(1);
    }
    return t;
}

/// `per_blob` points around each of `centers`, radius ~1.
Matrix blobs(const std::vector<Eigen::RowVectorXd>& centers, std::size_t per_blob, std::mt19937_64& rng) {
    const auto dims = centers.front().size();
    Matrix m(static_cast<Eigen::Index>(centers.size() * per_blob), dims);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dims)));
    for (std::size_t b = 0; b < centers.size(); ++b)
        for (std::size_t i = 0; i < per_blob; ++i)
            for (Eigen::Index c = 0; c < dims; ++c)
                m(static_cast<Eigen::Index>(b * per_blob + i), c) = centers[b](c) + normal(rng);
    return m;
}

/// Relabels clusters in ascending order of the first centroid coordinate.
std::vector<std::size_t> canonical_labels(const ClusterModel& model) {
    std::vector<std::size_t> order(model.k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return model.centroids(static_cast<Eigen::Index>(a), 0) < model.centroids(static_cast<Eigen::Index>(b), 0);
    });
    std::vector<std::size_t> rename(model.k);
    for (std::size_t i = 0; i < order.size(); ++i) rename[order[i]] = i;
    std::vector<std::size_t> out;
    for (auto l : model.labels) out.push_back(rename[l]);
    return out;
}

}  // namespace

TEST_CASE("k=1 puts the single centroid at the mean of the identity features") {
    std::mt19937_64 rng(1);
    const Matrix x = random_matrix(30, 4, rng, 3.0);
    const auto model = kmeans(table_from(x), 1, 9);
    REQUIRE(model.centroids.rows() == 1);
    CHECK((model.centroids.row(0) - x.colwise().mean()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(std::all_of(model.labels.begin(), model.labels.end(), [](std::size_t l) { return l == 0; }));
}

TEST_CASE("two blobs 50 radii apart are recovered exactly") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed);
        Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(5);
        Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(5);
        b(0) = 50.0;
        const Matrix x = blobs({a, b}, 20, rng);
        const auto model = kmeans(table_from(x), 2, seed);
        for (std::size_t i = 0; i < 40; ++i) CHECK(model.labels[i] == model.labels[(i / 20) * 20]);
        CHECK(model.labels[0] != model.labels[20]);
        CHECK(model.converged);
    }
}

TEST_CASE("same inputs and seed give the same assignment and inertia") {
    std::mt19937_64 rng(2);
    const auto t = table_from(random_matrix(80, 6, rng));
    const auto a = kmeans(t, 7, 123);
    const auto b = kmeans(t, 7, 123);
    CHECK(a.labels == b.labels);
    CHECK(a.inertia == b.inertia);
    CHECK(a.centroids == b.centroids);
}

TEST_CASE("Lloyd iterations never increase the objective") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(100 + seed);
        const auto t = table_from(random_matrix(120, 4, rng));
        const auto model = kmeans(t, 9, seed);
        REQUIRE(!model.inertia_history.empty());
        for (std::size_t i = 1; i < model.inertia_history.size(); ++i)
            CHECK(model.inertia_history[i] <= model.inertia_history[i - 1] + 1e-9);
    }
}

TEST_CASE("reported inertia is the sum of squared distances to assigned centroids") {
    std::mt19937_64 rng(3);
    const Matrix x = random_matrix(50, 3, rng);
    const auto model = kmeans(table_from(x), 5, 4);
    double total = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        total += (x.row(i) - model.centroids.row(static_cast<Eigen::Index>(model.labels[static_cast<std::size_t>(i)])))
                     .squaredNorm();
    CHECK(model.inertia == doctest::Approx(total).epsilon(1e-12));
    for (auto l : model.labels) CHECK(l < 5);
}

TEST_CASE("permuting identity order changes the partition only by relabeling") {
    std::mt19937_64 rng(5);
    std::vector<Eigen::RowVectorXd> centers;
    for (int b = 0; b < 4; ++b) {
        Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(3);
        c(0) = 40.0 * b;
        c(1) = 10.0 * (b % 2);
        centers.push_back(c);
    }
    const Matrix x = blobs(centers, 15, rng);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(x.rows()));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix shuffled(x.rows(), x.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled.row(static_cast<Eigen::Index>(i)) = x.row(perm[i]);

    const auto base = canonical_labels(kmeans(table_from(x), 4, 1));
    const auto moved = canonical_labels(kmeans(table_from(shuffled), 4, 2));
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK(moved[i] == base[static_cast<std::size_t>(perm[i])]);
}

TEST_CASE("empty clusters are repaired so every cluster keeps a member") {
    // Nine coincident points and one outlier; k=3 forces duplicate seeds.
    Matrix x = Matrix::Zero(10, 2);
    x(9, 0) = 5.0;
    x(8, 1) = 1e-3;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto model = kmeans(table_from(x), 3, seed);
        std::set<std::size_t> used(model.labels.begin(), model.labels.end());
        CHECK(used.size() == 3);
    }
}

TEST_CASE("kmeans rejects degenerate requests") {
    const auto t = table_from(Matrix::Ones(4, 2));
    CHECK_THROWS_AS(kmeans(t, 0, 0), ValidationError);
    CHECK_THROWS_AS(kmeans(t, 5, 0), ValidationError);
    CHECK_THROWS_AS(kmeans(t, 2, 0, 0), ValidationError);
    CHECK_THROWS_AS(kmeans(IdFeatureTable{}, 1, 0), ValidationError);
}

TEST_CASE("every image of an identity lands in its cluster's subset") {
    PoolBuilder builder(2);
    for (int i = 0; i < 7; ++i) builder.add("ds", "seven", i % 2, Eigen::RowVector2d(1.0, i));
    builder.add("ds", "a", 0, Eigen::RowVector2d(0, 0)).add("ds", "a", 1, Eigen::RowVector2d(0, 1));
    builder.add("ds", "b", 0, Eigen::RowVector2d(5, 0));
    builder.add("ds", "c", 0, Eigen::RowVector2d(9, 0));
    const auto pool = builder.build();

    ClusterModel model;
    model.k = 4;
    model.centroids = Matrix::Zero(4, 2);
    model.identity_ids = {"ds::seven", "ds::a", "ds::b", "ds::c"};
    model.labels = {3, 0, 1, 2};

    const auto subsets = materialize_subsets(pool, model);
    REQUIRE(subsets.clusters.size() == 4);
    CHECK(subsets.clusters[3].image_rows == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
    CHECK(subsets.clusters[3].identity_ids == std::vector<std::string>{"ds::seven"});
    CHECK(subsets.clusters[0].image_rows == std::vector<std::size_t>{7, 8});
    CHECK(subsets.total_identities() == 4);
}

TEST_CASE("subsets partition a random pool and match a group-by") {
    const auto pool = blob_pool(3, 25, 4, 5, 77);
    const auto ids = id_average(pool);
    const auto model = kmeans(ids, 6, 3);
    const auto subsets = materialize_subsets(pool, model);

    CHECK(subsets.total_identities() == ids.identity_ids.size());
    std::map<std::size_t, std::size_t> expected_images;
    for (const auto& r : pool.records) ++expected_images[*model.cluster_of(identity_key(r))];

    std::set<std::size_t> seen_rows;
    std::set<std::string> seen_ids;
    for (std::size_t c = 0; c < subsets.clusters.size(); ++c) {
        const auto& s = subsets.clusters[c];
        CHECK(s.image_rows.size() == expected_images[c]);
        CHECK(std::is_sorted(s.image_rows.begin(), s.image_rows.end()));
        for (auto r : s.image_rows) CHECK(seen_rows.insert(r).second);
        for (const auto& id : s.identity_ids) {
            CHECK(seen_ids.insert(id).second);
            CHECK(*model.cluster_of(id) == c);
        }
    }
    CHECK(seen_rows.size() == pool.size());
    CHECK(seen_ids.size() == ids.identity_ids.size());
}

TEST_CASE("materialize_subsets rejects a model that does not cover the pool") {
    const auto pool = blob_pool(1, 5, 2, 3, 1);
    auto model = kmeans(id_average(pool), 2, 0);
    const auto other = blob_pool(2, 5, 2, 3, 1);
    CHECK_THROWS_AS(materialize_subsets(other, model), ValidationError);
}

TEST_CASE("cluster model json carries the assignment") {
    const auto pool = blob_pool(1, 6, 2, 3, 2);
    const auto model = kmeans(id_average(pool), 2, 0);
    const auto j = nlohmann::json::parse(cluster_model_json(model));
    CHECK(j["k"] == 2);
    CHECK(j["assignment"].size() == 6);
    CHECK(j["centroids"].size() == 2);
}
