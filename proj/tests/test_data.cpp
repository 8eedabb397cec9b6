#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <set>

#include "dppvi/data.hpp"
#include "oracles.hpp"

using namespace dppvi;
using Catch::Matchers::WithinAbs;

namespace {

Dataset labels_only(int n, int majority_count, double majority_label = 1.0) {
    Dataset ds;
    ds.features = Eigen::MatrixXd::Zero(n, 1);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i)
        ds.labels[i] = i < majority_count ? majority_label : 1.0 - majority_label;
    return ds;
}

double realized_majority_fraction(const Dataset& ds, const std::vector<int>& shard,
                                  double majority_label) {
    int c = 0;
    for (int i : shard) c += ds.labels[i] == majority_label ? 1 : 0;
    return static_cast<double>(c) / static_cast<double>(shard.size());
}

}  // namespace

TEST_CASE("synth_logreg is symmetric at theta = 0 and deterministic") {
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(3);
    auto ds = synth_logreg(4000, 2, theta, 99);
    double rate = ds.labels.mean();
    // 3 standard errors of a Bernoulli(1/2) mean over 4000 draws
    CHECK_THAT(rate, WithinAbs(0.5, 3.0 * 0.5 / std::sqrt(4000.0)));

    auto ds2 = synth_logreg(4000, 2, theta, 99);
    CHECK(ds.features == ds2.features);
    CHECK(ds.labels == ds2.labels);
    auto ds3 = synth_logreg(100, 2, theta, 100);
    CHECK(ds3.n() == 100);
}

TEST_CASE("split sizes reproduce the Adult 10-client table") {
    const int n = 24429;  // implied by the table's n/M of 2442.9
    int maj = static_cast<int>(std::llround(0.76 * n));
    CHECK(split_sizes(n, maj, SplitSpec{10, 0.0, 0.0, 0}).n_small == 2442);
    CHECK(split_sizes(n, maj, SplitSpec{10, 0.75, 0.95, 0}).n_small == 610);
    CHECK(split_sizes(n, maj, SplitSpec{10, 0.7, -3.0, 0}).n_small == 732);

    auto s1 = split_sizes(n, maj, SplitSpec{10, 0.75, 0.95, 0});
    CHECK_THAT(static_cast<double>(s1.majority_per_small) / s1.n_small, WithinAbs(0.99, 0.005));
    // the paper's table prints .03 for this row; the formula value is .04 and
    // integer rounding keeps the realized fraction at .04
    auto s2 = split_sizes(n, maj, SplitSpec{10, 0.7, -3.0, 0});
    CHECK_THAT(static_cast<double>(s2.majority_per_small) / s2.n_small, WithinAbs(0.04, 0.005));
}

TEST_CASE("split sizes reproduce the Adult 200-client table") {
    const int n = 24429;
    int maj = static_cast<int>(std::llround(0.76 * n));
    CHECK(split_sizes(n, maj, SplitSpec{200, 0.0, 0.0, 0}).n_small == 122);
    CHECK(split_sizes(n, maj, SplitSpec{200, 0.75, 0.95, 0}).n_small == 30);
    CHECK(split_sizes(n, maj, SplitSpec{200, 0.7, -3.0, 0}).n_small == 36);
}

TEST_CASE("split sizes reproduce the balanced MIMIC-III 10-client table") {
    const int n = 4475;  // 80% of the 5594-sample rebalanced pool
    const int maj = 2238;
    CHECK(split_sizes(n, maj, SplitSpec{10, 0.0, 0.0, 0}).n_small == 447);
    auto u1 = split_sizes(n, maj, SplitSpec{10, 0.75, 0.95, 0});
    CHECK(u1.n_small == 111);
    CHECK_THAT(static_cast<double>(u1.majority_per_small) / u1.n_small, WithinAbs(0.97, 0.005));
    auto u2 = split_sizes(n, maj, SplitSpec{10, 0.7, -0.5, 0});
    CHECK(u2.n_small == 134);
    CHECK_THAT(static_cast<double>(u2.majority_per_small) / u2.n_small, WithinAbs(0.25, 0.005));
}

TEST_CASE("lambda_small target formula matches the stated examples") {
    auto s = split_sizes(1000, 500, SplitSpec{10, 0.0, 0.95, 0});
    CHECK_THAT(s.lambda_small, WithinAbs(0.975, 1e-12));
    auto s2 = split_sizes(1000, 500, SplitSpec{10, 0.0, -0.5, 0});
    CHECK_THAT(s2.lambda_small, WithinAbs(0.25, 1e-12));
    CHECK_THROWS_AS(split_sizes(1000, 500, SplitSpec{10, 0.0, 1.5, 0}), DomainError);
    CHECK_THROWS_AS(split_sizes(1000, 500, SplitSpec{10, 0.0, -1.2, 0}), DomainError);
}

TEST_CASE("split_clients produces disjoint covering shards with the right sizes") {
    auto ds = labels_only(4475, 2238);
    SplitSpec spec{10, 0.75, 0.95, 42};
    auto shards = split_clients(ds, spec);
    REQUIRE(shards.size() == 10);
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& s : shards) {
        total += s.size();
        for (int i : s) {
            CHECK(seen.insert(i).second);  // pairwise disjoint
        }
    }
    CHECK(total == static_cast<std::size_t>(ds.n()));  // union is the training set
    for (int k = 0; k < 5; ++k) CHECK(shards[k].size() == 111);
    for (int k = 5; k < 10; ++k) CHECK(shards[k].size() >= 782);
    for (int k = 0; k < 5; ++k)
        CHECK_THAT(realized_majority_fraction(ds, shards[k], 1.0), WithinAbs(0.97, 0.005));

    // balanced split, odd client count allowed
    auto bal = split_clients(ds, SplitSpec{5, 0.0, 0.0, 7});
    std::size_t tb = 0;
    for (const auto& s : bal) tb += s.size();
    CHECK(tb == static_cast<std::size_t>(ds.n()));
    CHECK_THROWS_AS(split_clients(ds, SplitSpec{5, 0.5, 0.0, 7}), DomainError);
}

TEST_CASE("split_clients rejects infeasible class requests") {
    auto ds = labels_only(1000, 900);
    // the small client wants 150 minority rows but only 100 exist
    CHECK_THROWS_AS(split_clients(ds, SplitSpec{2, 0.0, -2.0, 1}), InfeasibleSplit);
}

TEST_CASE("partition_local limiting cases and cover property") {
    auto one = partition_local(12, 1, 5);
    REQUIRE(one.size() == 1);
    CHECK(one[0].size() == 12);

    auto singletons = partition_local(7, 7, 5);
    REQUIRE(singletons.size() == 7);
    for (const auto& p : singletons) CHECK(p.size() == 1);

    RandomStream rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        int n = 2 + static_cast<int>(rng.uniform_int(40));
        int parts = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
        auto pieces = partition_local(n, parts, trial);
        std::set<int> seen;
        std::size_t max_sz = 0, min_sz = static_cast<std::size_t>(n) + 1;
        for (const auto& p : pieces) {
            max_sz = std::max(max_sz, p.size());
            min_sz = std::min(min_sz, p.size());
            for (int i : p) REQUIRE(seen.insert(i).second);
        }
        REQUIRE(seen.size() == static_cast<std::size_t>(n));
        REQUIRE(max_sz - min_sz <= 1);
    }
    CHECK_THROWS_AS(partition_local(3, 4, 0), DomainError);
    CHECK_THROWS_AS(partition_local(3, 0, 0), DomainError);
}

namespace {
std::string write_temp_csv(const std::string& name, const std::string& body) {
    std::string path = std::string("/tmp/") + name;
    std::ofstream out(path);
    out << body;
    return path;
}
}  // namespace

TEST_CASE("load_tabular splits, standardizes, and one-hot encodes") {
    std::string path = write_temp_csv("dppvi_toy.csv",
                                      "age,color,flat,income\n"
                                      "10,red,7,hi\n"
                                      "20,blue,7,lo\n"
                                      "30,red,7,hi\n"
                                      "40,green,7,lo\n"
                                      "50,red,7,hi\n"
                                      "60,blue,7,lo\n"
                                      "70,red,7,hi\n"
                                      "80,green,7,lo\n"
                                      "90,red,7,hi\n"
                                      "100,blue,7,lo\n");
    TabularSchema schema;
    schema.label_column = "income";
    schema.positive_label = "hi";
    schema.continuous = {"age", "flat"};
    schema.categorical = {"color"};
    TabularOptions opts;
    opts.seed = 3;
    auto td = load_tabular(path, schema, opts);
    CHECK(td.train.n() == 8);
    CHECK(td.valid.n() == 2);
    // constant column standardizes to zeros with the std clamped to 1
    CHECK_THAT(td.standardize_std[1], WithinAbs(1.0, 1e-15));
    for (int i = 0; i < td.train.n(); ++i) CHECK(td.train.features(i, 1) == 0.0);

    // standardization statistics come from training rows only
    double mean = 0.0;
    for (int i = 0; i < td.train.n(); ++i)
        mean += td.train.features(i, 0) * td.standardize_std[0] + td.standardize_mean[0];
    mean /= td.train.n();
    CHECK_THAT(mean, WithinAbs(td.standardize_mean[0], 1e-9));
    double col_mean = td.train.features.col(0).mean();
    CHECK_THAT(col_mean, WithinAbs(0.0, 1e-12));

    // one-hot block: one feature per training category, rows sum to one when
    // the category was seen in training
    CHECK(td.feature_names.size() >= 4);

    TabularSchema bad = schema;
    bad.continuous = {"agee"};
    CHECK_THROWS_AS(load_tabular(path, bad, opts), SchemaMismatch);
    CHECK_THROWS_AS(load_tabular("/tmp/does_not_exist_dppvi.csv", schema, opts), IoError);
}

TEST_CASE("load_tabular rebalances a pool to the minority count before splitting") {
    // pool: 2797 minority, 4000 majority -> rebalanced 5594, train 4475
    std::ostringstream body;
    body << "x,y\n";
    for (int i = 0; i < 2797; ++i) body << i << ",pos\n";
    for (int i = 0; i < 4000; ++i) body << i << ",neg\n";
    std::string path = write_temp_csv("dppvi_pool.csv", body.str());
    TabularSchema schema;
    schema.label_column = "y";
    schema.positive_label = "pos";
    schema.continuous = {"x"};
    TabularOptions opts;
    opts.rebalance = true;
    opts.seed = 11;
    auto td = load_tabular(path, schema, opts);
    CHECK(td.train.n() + td.valid.n() == 5594);
    CHECK(td.train.n() == 4475);
    double pos_fraction = td.train.labels.mean() * td.train.n() + td.valid.labels.mean() * td.valid.n();
    CHECK_THAT(pos_fraction, WithinAbs(2797.0, 0.5));
}
