#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dppvi/errors.hpp"
#include "dppvi/random.hpp"

namespace dppvi {

struct Dataset {
    Eigen::MatrixXd features;  // n x d_in
    Eigen::VectorXd labels;    // length n, entries in {0, 1}

    int n() const { return static_cast<int>(features.rows()); }
    int input_dim() const { return static_cast<int>(features.cols()); }

    Dataset rows(const std::vector<int>& idx) const {
        Dataset out;
        out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
        out.labels.resize(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            out.features.row(static_cast<Eigen::Index>(i)) = features.row(idx[i]);
            out.labels[static_cast<Eigen::Index>(i)] = labels[idx[i]];
        }
        return out;
    }
};

// Synthetic logistic-regression data: x ~ N(0, I), y ~ Bern(sigmoid(x~' theta)),
// theta_true of length d_in + 1 with the bias first.
inline Dataset synth_logreg(int n, int d_in, const Eigen::VectorXd& theta_true,
                            std::uint64_t seed) {
    if (n < 1) throw DomainError("synth_logreg: n must be >= 1");
    if (theta_true.size() != d_in + 1)
        throw DimensionMismatch("synth_logreg: theta_true must have length d_in + 1");
    RandomStream rng(derive_seed({seed, 0x5d47u}));
    Dataset ds;
    ds.features.resize(n, d_in);
    ds.labels.resize(n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d_in; ++j) ds.features(i, j) = rng.normal();
        double z = theta_true[0] + ds.features.row(i).dot(theta_true.tail(d_in));
        double p = 1.0 / (1.0 + std::exp(-z));
        ds.labels[i] = rng.uniform() < p ? 1.0 : 0.0;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Client splitting scheme: half of the clients are small, half large, with
//   n_small = floor((n/M)(1 - rho)),  n_large = floor((n/M)(1 + rho)),
// and the small clients' majority-class fraction targeted at
//   lambda_small = lambda + (1 - lambda) * kappa.
// Large clients receive the remaining rows at random. Any rows left over by
// the floor arithmetic are dealt round-robin to the large clients so that the
// shards always cover the dataset.
// ---------------------------------------------------------------------------

struct SplitSpec {
    int clients = 1;
    double rho = 0.0;
    double kappa = 0.0;
    std::uint64_t seed = 0;
};

struct SplitSizes {
    int n_small = 0;
    int n_large = 0;
    double lambda = 0.0;          // majority fraction in the full data
    double lambda_small = 0.0;    // target majority fraction for small clients
    int majority_per_small = 0;   // realized integer count per small shard
};

inline SplitSizes split_sizes(int n, int majority_count, const SplitSpec& spec) {
    if (spec.clients < 1) throw DomainError("split: clients must be >= 1");
    if (spec.rho < 0.0 || spec.rho > 1.0) throw DomainError("split: rho must be in [0, 1]");
    double per_client = static_cast<double>(n) / spec.clients;
    SplitSizes s;
    s.n_small = static_cast<int>(std::floor(per_client * (1.0 - spec.rho)));
    s.n_large = static_cast<int>(std::floor(per_client * (1.0 + spec.rho)));
    s.lambda = static_cast<double>(majority_count) / n;
    double kappa_min = s.lambda < 1.0 ? -s.lambda / (1.0 - s.lambda)
                                      : -std::numeric_limits<double>::infinity();
    if (spec.kappa > 1.0 || spec.kappa < kappa_min)
        throw DomainError("split: kappa outside [-lambda/(1-lambda), 1]");
    s.lambda_small = s.lambda + (1.0 - s.lambda) * spec.kappa;
    double want = s.lambda_small * s.n_small;
    s.majority_per_small =
        std::clamp(static_cast<int>(std::llround(want)), 0, s.n_small);
    return s;
}

inline std::vector<std::vector<int>> split_clients(const Dataset& ds,
                                                   const SplitSpec& spec) {
    const int n = ds.n();
    const int M = spec.clients;
    const bool unbalanced = spec.rho != 0.0 || spec.kappa != 0.0;
    if (unbalanced && M % 2 != 0)
        throw DomainError("split: unbalanced splits need an even client count");

    int count1 = 0;
    for (int i = 0; i < n; ++i) count1 += ds.labels[i] > 0.5 ? 1 : 0;
    const double majority_label = 2 * count1 >= n ? 1.0 : 0.0;  // ties go to class 1
    const int majority_count = majority_label > 0.5 ? count1 : n - count1;

    SplitSizes s = split_sizes(n, majority_count, spec);

    std::vector<int> maj_pool, min_pool;
    for (int i = 0; i < n; ++i)
        (ds.labels[i] == majority_label ? maj_pool : min_pool).push_back(i);
    {
        RandomStream rng(derive_seed({spec.seed, 0x357a9u}));
        auto pm = rng.permutation(static_cast<int>(maj_pool.size()));
        auto pn = rng.permutation(static_cast<int>(min_pool.size()));
        std::vector<int> a(maj_pool.size()), b(min_pool.size());
        for (std::size_t i = 0; i < pm.size(); ++i) a[i] = maj_pool[pm[i]];
        for (std::size_t i = 0; i < pn.size(); ++i) b[i] = min_pool[pn[i]];
        maj_pool.swap(a);
        min_pool.swap(b);
    }

    std::vector<std::vector<int>> shards(M);
    std::size_t maj_at = 0, min_at = 0;
    const int n_small_shards = M % 2 == 0 ? M / 2 : 0;
    for (int k = 0; k < n_small_shards; ++k) {
        int want_maj = s.majority_per_small;
        int want_min = s.n_small - want_maj;
        if (maj_at + want_maj > maj_pool.size() || min_at + want_min > min_pool.size())
            throw InfeasibleSplit("split: requested class counts exceed availability");
        for (int i = 0; i < want_maj; ++i) shards[k].push_back(maj_pool[maj_at++]);
        for (int i = 0; i < want_min; ++i) shards[k].push_back(min_pool[min_at++]);
    }

    std::vector<int> rest;
    rest.insert(rest.end(), maj_pool.begin() + static_cast<long>(maj_at), maj_pool.end());
    rest.insert(rest.end(), min_pool.begin() + static_cast<long>(min_at), min_pool.end());
    {
        RandomStream rng(derive_seed({spec.seed, 0x91c4u}));
        auto p = rng.permutation(static_cast<int>(rest.size()));
        std::vector<int> shuffled(rest.size());
        for (std::size_t i = 0; i < p.size(); ++i) shuffled[i] = rest[p[i]];
        rest.swap(shuffled);
    }

    const int first_large = n_small_shards;
    const int n_large_shards = M - n_small_shards;
    const int base = n_small_shards > 0 ? s.n_large : s.n_small;
    std::size_t at = 0;
    for (int k = 0; k < n_large_shards; ++k) {
        if (at + base > rest.size())
            throw InfeasibleSplit("split: not enough rows for large shards");
        for (int i = 0; i < base; ++i) shards[first_large + k].push_back(rest[at++]);
    }
    int k = 0;
    while (at < rest.size()) {  // leftovers from the floor arithmetic
        shards[first_large + k % n_large_shards].push_back(rest[at++]);
        ++k;
    }
    return shards;
}

// Uniform random partition into `parts` disjoint sub-shards whose sizes differ
// by at most one.
inline std::vector<std::vector<int>> partition_local(const std::vector<int>& shard,
                                                     int parts, std::uint64_t seed) {
    if (parts < 1) throw DomainError("partition_local: parts must be >= 1");
    if (parts > static_cast<int>(shard.size()))
        throw DomainError("partition_local: more parts than data points");
    RandomStream rng(derive_seed({seed, 0x70a2u}));
    auto perm = rng.permutation(static_cast<int>(shard.size()));
    std::vector<std::vector<int>> out(parts);
    for (std::size_t i = 0; i < shard.size(); ++i)
        out[i % parts].push_back(shard[perm[i]]);
    return out;
}

inline std::vector<std::vector<int>> partition_local(int shard_size, int parts,
                                                     std::uint64_t seed) {
    std::vector<int> idx(shard_size);
    for (int i = 0; i < shard_size; ++i) idx[i] = i;
    return partition_local(idx, parts, seed);
}

// ---------------------------------------------------------------------------
// Tabular CSV ingestion: standardization for continuous columns (train
// statistics only), one-hot encoding for categorical columns (categories
// collected from training rows), binary label mapping, deterministic
// train/validation split, optional majority-class rebalancing before the
// split. Plain comma-separated files with a header row; quoted fields are not
// supported.
// ---------------------------------------------------------------------------

struct TabularSchema {
    std::string label_column;
    std::string positive_label;
    std::vector<std::string> continuous;
    std::vector<std::string> categorical;
};

struct TabularOptions {
    double train_fraction = 0.8;
    bool rebalance = false;
    std::uint64_t seed = 0;
};

struct TabularData {
    Dataset train;
    Dataset valid;
    std::vector<std::string> feature_names;
    Eigen::VectorXd standardize_mean;  // per continuous column, train rows only
    Eigen::VectorXd standardize_std;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

}  // namespace detail

inline TabularData load_tabular(const std::string& path, const TabularSchema& schema,
                                const TabularOptions& opts = {}) {
    std::ifstream in(path);
    if (!in) throw IoError("load_tabular: cannot open " + path);
    if (!(opts.train_fraction > 0.0 && opts.train_fraction < 1.0))
        throw DomainError("load_tabular: train_fraction must be in (0, 1)");

    std::string line;
    if (!std::getline(in, line)) throw SchemaMismatch("load_tabular: empty file");
    auto header = detail::split_csv_line(line);
    std::map<std::string, int> col_index;
    for (std::size_t i = 0; i < header.size(); ++i)
        col_index[header[i]] = static_cast<int>(i);

    auto need = [&](const std::string& name) {
        auto it = col_index.find(name);
        if (it == col_index.end())
            throw SchemaMismatch("load_tabular: column '" + name + "' not in header");
        return it->second;
    };
    const int label_col = need(schema.label_column);
    std::vector<int> cont_cols, cat_cols;
    for (const auto& c : schema.continuous) cont_cols.push_back(need(c));
    for (const auto& c : schema.categorical) cat_cols.push_back(need(c));

    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw SchemaMismatch("load_tabular: row width differs from header");
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw SchemaMismatch("load_tabular: no data rows");

    std::vector<double> ys(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        ys[i] = rows[i][static_cast<std::size_t>(label_col)] == schema.positive_label ? 1.0 : 0.0;

    std::vector<int> keep(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) keep[i] = static_cast<int>(i);

    if (opts.rebalance) {
        std::vector<int> pos, neg;
        for (int i : keep) (ys[static_cast<std::size_t>(i)] > 0.5 ? pos : neg).push_back(i);
        auto& maj = pos.size() >= neg.size() ? pos : neg;
        auto& mino = pos.size() >= neg.size() ? neg : pos;
        RandomStream rng(derive_seed({opts.seed, 0xba1au}));
        auto perm = rng.permutation(static_cast<int>(maj.size()));
        std::vector<int> kept_maj;
        for (std::size_t i = 0; i < mino.size(); ++i) kept_maj.push_back(maj[perm[i]]);
        keep = mino;
        keep.insert(keep.end(), kept_maj.begin(), kept_maj.end());
        std::sort(keep.begin(), keep.end());
    }

    RandomStream rng(derive_seed({opts.seed, 0x8012u}));
    auto perm = rng.permutation(static_cast<int>(keep.size()));
    std::vector<int> shuffled(keep.size());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = keep[perm[i]];
    const int n_train =
        static_cast<int>(std::floor(opts.train_fraction * static_cast<double>(shuffled.size())));
    if (n_train < 1 || n_train == static_cast<int>(shuffled.size()))
        throw DomainError("load_tabular: degenerate train/validation split");
    std::vector<int> train_idx(shuffled.begin(), shuffled.begin() + n_train);
    std::vector<int> valid_idx(shuffled.begin() + n_train, shuffled.end());

    // standardization statistics and one-hot categories from training rows only
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(cont_cols.size()));
    Eigen::VectorXd sd = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(cont_cols.size()));
    auto cell_value = [&](int row, int col) {
        const std::string& s = rows[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)];
        try {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used != s.size()) throw SchemaMismatch("load_tabular: non-numeric value '" + s + "'");
            return v;
        } catch (const std::invalid_argument&) {
            throw SchemaMismatch("load_tabular: non-numeric value '" + s + "'");
        }
    };
    for (std::size_t c = 0; c < cont_cols.size(); ++c) {
        double m = 0.0;
        for (int r : train_idx) m += cell_value(r, cont_cols[c]);
        m /= static_cast<double>(train_idx.size());
        double v = 0.0;
        for (int r : train_idx) {
            double d = cell_value(r, cont_cols[c]) - m;
            v += d * d;
        }
        v /= static_cast<double>(train_idx.size());
        mean[static_cast<Eigen::Index>(c)] = m;
        sd[static_cast<Eigen::Index>(c)] = v > 0.0 ? std::sqrt(v) : 1.0;  // constant column rule
    }
    std::vector<std::vector<std::string>> categories(cat_cols.size());
    for (std::size_t c = 0; c < cat_cols.size(); ++c) {
        std::vector<std::string> vals;
        for (int r : train_idx)
            vals.push_back(rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(cat_cols[c])]);
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        categories[c] = std::move(vals);
    }

    TabularData out;
    for (std::size_t c = 0; c < cont_cols.size(); ++c)
        out.feature_names.push_back(schema.continuous[c]);
    for (std::size_t c = 0; c < cat_cols.size(); ++c)
        for (const auto& v : categories[c])
            out.feature_names.push_back(schema.categorical[c] + "=" + v);
    out.standardize_mean = mean;
    out.standardize_std = sd;

    const Eigen::Index d = static_cast<Eigen::Index>(out.feature_names.size());
    auto materialize = [&](const std::vector<int>& idx) {
        Dataset ds;
        ds.features.resize(static_cast<Eigen::Index>(idx.size()), d);
        ds.labels.resize(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t i = 0; i < idx.size(); ++i) {
            Eigen::Index at = 0;
            for (std::size_t c = 0; c < cont_cols.size(); ++c)
                ds.features(static_cast<Eigen::Index>(i), at++) =
                    (cell_value(idx[i], cont_cols[c]) - mean[static_cast<Eigen::Index>(c)]) /
                    sd[static_cast<Eigen::Index>(c)];
            for (std::size_t c = 0; c < cat_cols.size(); ++c) {
                const std::string& v =
                    rows[static_cast<std::size_t>(idx[i])][static_cast<std::size_t>(cat_cols[c])];
                for (const auto& cat : categories[c])
                    ds.features(static_cast<Eigen::Index>(i), at++) = v == cat ? 1.0 : 0.0;
            }
            ds.labels[static_cast<Eigen::Index>(i)] = ys[static_cast<std::size_t>(idx[i])];
        }
        return ds;
    };
    out.train = materialize(train_idx);
    out.valid = materialize(valid_idx);
    return out;
}

}  // namespace dppvi
