#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "proxyset/rankeval.hpp"

using namespace proxyset;
using namespace proxyset::testing;

namespace {

std::vector<double> uniform_vector(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

/// Integer-valued draws so ties are common.
std::vector<double> tied_vector(std::size_t n, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, 6);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

/// Identity "a" seen by cameras 0 and 1; four single-camera distractors.
FeaturePool two_camera_instance(const Eigen::RowVector2d& a0, const Eigen::RowVector2d& a1,
                                const std::vector<Eigen::RowVector2d>& distractors) {
    PoolBuilder builder(2);
    builder.add("ds", "a", 0, a0, "img0").add("ds", "a", 1, a1, "img1");
    for (std::size_t i = 0; i < distractors.size(); ++i)
        builder.add("ds", "d" + std::to_string(i), 2, distractors[i], "img" + std::to_string(i + 2));
    return builder.build();
}

/// `ids` identities of `per_id` images over two cameras plus `loose` single-image distractors.
FeaturePool random_instance(std::size_t ids, std::size_t per_id, std::size_t loose, std::mt19937_64& rng) {
    PoolBuilder builder(4);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t counter = 0;
    auto image_id = [&] {
        const auto s = std::to_string(counter++);
        return "img" + std::string(3 - s.size(), '0') + s;
    };
    for (std::size_t id = 0; id < ids; ++id) {
        Eigen::RowVectorXd center(4);
        for (auto& c : center) c = normal(rng);
        for (std::size_t i = 0; i < per_id; ++i) {
            Eigen::RowVectorXd x = center;
            for (auto& c : x) c += 0.8 * normal(rng);
            builder.add("ds", "p" + std::to_string(id), static_cast<int>(i % 2), x, image_id());
        }
    }
    for (std::size_t i = 0; i < loose; ++i) {
        Eigen::RowVectorXd x(4);
        for (auto& c : x) c = normal(rng);
        builder.add("ds", "loose" + std::to_string(i), 5, x, image_id());
    }
    return builder.build();
}

AccuracyTable table_of(std::vector<double> proxy, std::vector<double> reference) {
    AccuracyTable t;
    t.dataset_ids = {"proxy", "target"};
    t.values.resize(static_cast<Eigen::Index>(proxy.size()), 2);
    for (std::size_t i = 0; i < proxy.size(); ++i) {
        t.model_ids.push_back("m" + std::to_string(i));
        t.values(static_cast<Eigen::Index>(i), 0) = proxy[i];
        t.values(static_cast<Eigen::Index>(i), 1) = reference[i];
    }
    return t;
}

}  // namespace

TEST_CASE("a true match ranked first gives AP 1") {
    const auto pool = two_camera_instance({1, 0}, {1, 0.1}, {{0, 1}, {-1, 0}, {0, -1}, {-1, -1}});
    const auto r = reid_eval(pool.matrix, pool.records);
    CHECK(r.queries == 2);
    CHECK(r.mean_ap == 1.0);
    CHECK(r.cmc == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("one distractor above the only match gives AP 0.5") {
    const auto pool = two_camera_instance({1, 0}, {0, 1}, {{1, 1}, {-1, -0.2}, {-0.2, -1}, {-1, -1}});
    const auto r = reid_eval(pool.matrix, pool.records);
    CHECK(r.mean_ap == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.cmc[0] == 0.0);
    CHECK(r.cmc[1] == 1.0);
}

TEST_CASE("mAP matches a definitional AP computation on random instances") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        const auto pool = random_instance(3, 4, 0, rng);  // 12 images, 3 identities, 2 cameras
        const auto r = reid_eval(pool.matrix, pool.records);
        CHECK(std::abs(r.mean_ap - oracle::reid_map(pool.matrix, pool.records)) <= 1e-12);
        CHECK(r.queries == 6);
        CHECK(r.mean_ap >= 0.0);
        CHECK(r.mean_ap <= 1.0);
        CHECK(std::is_sorted(r.cmc.begin(), r.cmc.end()));
    }
}

TEST_CASE("the query is the smallest image id of its identity-camera pair") {
    PoolBuilder builder(2);
    builder.add("ds", "a", 0, Eigen::RowVector2d(1, 0), "img1")
        .add("ds", "a", 0, Eigen::RowVector2d(0, 1), "img5")
        .add("ds", "a", 1, Eigen::RowVector2d(1, 0), "img2")
        .add("ds", "b", 1, Eigen::RowVector2d(0.5, 1), "img3");
    const auto pool = builder.build();
    const auto r = reid_eval(pool.matrix, pool.records, std::vector<std::size_t>{1});
    // query img1: img2 first, AP 1 (img5 as query would give 0.5)
    // query img2: img1, img3, img5, AP (1 + 2/3) / 2
    CHECK(r.queries == 2);
    CHECK(r.mean_ap == doctest::Approx(11.0 / 12.0).epsilon(1e-15));
}

TEST_CASE("removing a distractor never lowers mAP") {
    std::mt19937_64 rng(32);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pool = random_instance(3, 4, 4, rng);
        const double full = reid_eval(pool.matrix, pool.records).mean_ap;
        for (std::size_t drop = 12; drop < pool.size(); ++drop) {
            std::vector<std::size_t> keep;
            for (std::size_t i = 0; i < pool.size(); ++i)
                if (i != drop) keep.push_back(i);
            std::vector<ImageRecord> records;
            for (auto i : keep) records.push_back(pool.records[i]);
            CHECK(reid_eval(pool.gather(keep), records).mean_ap >= full - 1e-15);
        }
    }
}

TEST_CASE("reid_eval needs an identity seen by two cameras") {
    PoolBuilder builder(2);
    builder.add("ds", "a", 0, Eigen::RowVector2d(1, 0)).add("ds", "b", 1, Eigen::RowVector2d(0, 1));
    const auto pool = builder.build();
    CHECK_THROWS_AS(reid_eval(pool.matrix, pool.records), ValidationError);
    CHECK_THROWS_AS(reid_eval(Matrix::Ones(3, 2), pool.records), ValidationError);
}

TEST_CASE("spearman is 1 under a monotone map and -1 under reversal") {
    std::mt19937_64 rng(33);
    const auto x = uniform_vector(25, rng);
    std::vector<double> y;
    for (double v : x) y.push_back(std::exp(3.0 * v));
    CHECK(spearman(x, y) == doctest::Approx(1.0).epsilon(1e-15));
    std::vector<double> r;
    for (double v : x) r.push_back(-v);
    CHECK(spearman(x, r) == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("spearman equals the Pearson correlation of definitional midranks") {
    std::mt19937_64 rng(34);
    for (int trial = 0; trial < 50; ++trial) {
        const auto x = trial % 2 ? tied_vector(30, rng) : uniform_vector(30, rng);
        const auto y = trial % 3 ? tied_vector(30, rng) : uniform_vector(30, rng);
        CHECK(std::abs(spearman(x, y) - oracle::rank_pearson(x, y)) <= 1e-12);
    }
}

TEST_CASE("midranks average tied positions") {
    const std::vector<double> v{10, 20, 10, 30, 20, 20};
    CHECK(midranks(v) == std::vector<double>{1.5, 4.0, 1.5, 6.0, 4.0, 4.0});
}

TEST_CASE("kendall tau-b hand examples") {
    const std::vector<double> x{1, 2, 3};
    CHECK(kendall_tau_b(x, x) == 1.0);
    CHECK(kendall_tau_b(x, std::vector<double>{1, 3, 2}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(kendall_tau_b(x, std::vector<double>{3, 2, 1}) == -1.0);
}

TEST_CASE("kendall tau-b equals the pair-count oracle on tied data") {
    std::mt19937_64 rng(35);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 49);
        auto x = tied_vector(n, rng);
        auto y = tied_vector(n, rng);
        x[0] = 100.0;  // keeps at least one untied value on each side
        y[1] = -100.0;
        CHECK(kendall_tau_b(x, y) == oracle::tau_b(x, y));
    }
}

TEST_CASE("rank statistics are invariant to increasing transforms and flip under negation") {
    std::mt19937_64 rng(36);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = uniform_vector(40, rng);
        const auto y = uniform_vector(40, rng);
        std::vector<double> tx;
        std::vector<double> neg;
        for (double v : x) {
            tx.push_back(std::log(v) * 5.0 + 2.0);
            neg.push_back(-v);
        }
        CHECK(std::abs(spearman(x, y) - spearman(tx, y)) <= 1e-12);
        CHECK(std::abs(kendall_tau_b(x, y) - kendall_tau_b(tx, y)) <= 1e-12);
        CHECK(spearman(neg, y) == -spearman(x, y));
        CHECK(kendall_tau_b(neg, y) == -kendall_tau_b(x, y));
    }
}

TEST_CASE("rank statistics reject mismatched, short, or constant input") {
    const std::vector<double> a{1, 2, 3};
    CHECK_THROWS_AS(spearman(a, std::vector<double>{1, 2}), ValidationError);
    CHECK_THROWS_AS(kendall_tau_b(std::vector<double>{1}, std::vector<double>{1}), ValidationError);
    CHECK_THROWS(spearman(a, std::vector<double>{2, 2, 2}));
    CHECK_THROWS(kendall_tau_b(a, std::vector<double>{2, 2, 2}));
}

TEST_CASE("permutation p-values are calibrated under independence") {
    std::mt19937_64 rng(37);
    for (auto stat : {RankStatistic::spearman, RankStatistic::kendall}) {
        int small = 0;
        for (int trial = 0; trial < 50; ++trial) {
            const auto x = uniform_vector(30, rng);
            const auto y = uniform_vector(30, rng);
            small += perm_pvalue(x, y, stat, 999, static_cast<std::uint64_t>(trial)) < 0.05;
        }
        CHECK(small <= 8);  // fraction in [0, 0.16]
    }
}

TEST_CASE("perfect correlation gets the smallest attainable p-value") {
    std::vector<double> x(20);
    std::iota(x.begin(), x.end(), 0.0);
    CHECK(perm_pvalue(x, x, RankStatistic::spearman, 999, 1) == doctest::Approx(1.0 / 1000.0));
    CHECK(perm_pvalue(x, x, RankStatistic::kendall, 999, 1) == doctest::Approx(1.0 / 1000.0));
}

TEST_CASE("permutation p-values are deterministic in the seed") {
    std::mt19937_64 rng(38);
    const auto x = uniform_vector(15, rng);
    const auto y = uniform_vector(15, rng);
    CHECK(perm_pvalue(x, y, RankStatistic::kendall, 99, 4) == perm_pvalue(x, y, RankStatistic::kendall, 99, 4));
    const double p = perm_pvalue(x, y, RankStatistic::spearman, 99, 4);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
}

TEST_CASE("identical proxy and reference columns give rho = tau = 1 and no regret") {
    const auto t = table_of({0.3, 0.5, 0.1, 0.7}, {0.3, 0.5, 0.1, 0.7});
    const auto q = proxy_quality(t, "proxy", "target", 99, 0);
    CHECK(q.spearman_rho == doctest::Approx(1.0));
    CHECK(q.kendall_tau == doctest::Approx(1.0));
    CHECK(q.regret == 0.0);
    CHECK(q.best_on_proxy == "m3");
    CHECK(q.models == 4);
}

TEST_CASE("swapping the top two models costs their reference difference") {
    const std::vector<double> reference{0.20, 0.55, 0.31, 0.62, 0.47};
    std::vector<double> proxy = reference;
    std::swap(proxy[3], proxy[1]);
    const auto q = proxy_quality(table_of(proxy, reference), "proxy", "target", 99, 0);
    CHECK(q.best_on_proxy == "m1");
    CHECK(q.best_on_reference == "m3");
    CHECK(q.regret == doctest::Approx(0.62 - 0.55).epsilon(1e-15));
    CHECK(q.spearman_rho == doctest::Approx(oracle::rank_pearson(proxy, reference)).epsilon(1e-12));
    CHECK(q.kendall_tau == doctest::Approx(oracle::tau_b(proxy, reference)).epsilon(1e-12));
}

TEST_CASE("best-on-proxy is invariant to increasing rescaling of the proxy column") {
    std::mt19937_64 rng(39);
    const auto proxy = uniform_vector(12, rng);
    const auto reference = uniform_vector(12, rng);
    std::vector<double> scaled;
    for (double v : proxy) scaled.push_back(v * v * 10.0 + 1.0);
    const auto a = proxy_quality(table_of(proxy, reference), "proxy", "target", 99, 0);
    const auto b = proxy_quality(table_of(scaled, reference), "proxy", "target", 99, 0);
    CHECK(a.best_on_proxy == b.best_on_proxy);
    CHECK(a.regret == b.regret);
}

TEST_CASE("quality report json carries every field") {
    const auto q = proxy_quality(table_of({1, 2, 3}, {1, 3, 2}), "proxy", "target", 99, 0);
    const auto j = nlohmann::json::parse(quality_report_json(q));
    CHECK(j["kendall_tau"].get<double>() == doctest::Approx(1.0 / 3.0));
    CHECK(j.contains("p_value_rho"));
    CHECK(j["best_on_reference"] == "m1");
}

TEST_CASE("accuracy tables round-trip through csv") {
    TempDir dir("acc");
    auto t = table_of({0.1, 0.25, 1.0 / 3.0}, {0.4, 0.5, 0.6});
    t.model_ids[1] = "model, with comma";
    write_accuracy_csv(dir / "acc.csv", t);
    const auto back = read_accuracy_csv(dir / "acc.csv");
    CHECK(back.model_ids == t.model_ids);
    CHECK(back.dataset_ids == t.dataset_ids);
    CHECK(back.values == t.values);
    CHECK(back.column("target") == std::vector<double>{0.4, 0.5, 0.6});
    CHECK_THROWS_AS(back.column("missing"), ValidationError);
}

TEST_CASE("malformed accuracy tables are rejected") {
    TempDir dir("acc_bad");
    std::ofstream(dir / "a.csv") << "model,x\nm0,1\n";
    CHECK_THROWS_AS(read_accuracy_csv(dir / "a.csv"), ValidationError);
    std::ofstream(dir / "b.csv") << "model_id,x,y\nm0,1,2\nm1,3\nm2,abc,1\n";
    try {
        read_accuracy_csv(dir / "b.csv");
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(e.issues().size() == 2);
        CHECK(e.issues()[0].line == 3);
    }
    CHECK_THROWS_AS(read_accuracy_csv(dir / "missing.csv"), ValidationError);
}
