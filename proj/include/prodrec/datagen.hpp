#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "prodrec/corpus.hpp"

namespace prodrec {

struct IntRange {
    std::int64_t lo = 1;
    std::int64_t hi = 1;
};

struct PriceRange {
    double lo = 5.0;
    double hi = 50.0;
};

struct CohortSpec {
    CohortKey key;
    double weight = 1.0;
};

/// Synthetic purchase process: each user walks a first-order Markov chain over
/// product groups, one group per receipt, and picks receipt items i.i.d. from
/// that group.
struct GenConfig {
    std::size_t num_users = 1000;
    std::size_t num_products = 200;
    std::size_t num_groups = 10;
    IntRange receipts_per_user{5, 15};
    IntRange items_per_receipt{1, 4};

    /// Probability that the next receipt stays in the current group.
    double within_group_prob = 0.9;
    /// Next-group kernel used otherwise (G x G, row-stochastic). Empty means a
    /// random kernel with zero diagonal drawn from the seed.
    std::vector<std::vector<double>> group_transition;

    /// Empty means a built-in four-cohort mix.
    std::vector<CohortSpec> cohort_mix;
    /// Multiplier on each cohort's favourite products (the first favourite gets twice this).
    double cohort_bias = 1.0;
    std::size_t cohort_favorites = 5;
    /// Zipf exponent of base product popularity inside a group; 0 is uniform.
    double popularity_skew = 0.0;

    /// Per-group product price range; empty means [5, 50] for every group.
    std::vector<PriceRange> group_prices;

    Timestamp start_time = 1'400'025'600;  // a UTC midnight
    IntRange gap_days{1, 3};

    /// Popularity drift: every `trend_period_days` a fresh random set of
    /// `trend_size` products gets weight x `trend_boost`. 0 disables.
    std::int64_t trend_period_days = 0;
    std::size_t trend_size = 10;
    double trend_boost = 1.0;

    /// Fraction of users that shop; the rest only appear in the cohort stream.
    double shopper_fraction = 1.0;

    std::uint64_t seed = 42;
};

struct CohortTally {
    std::int64_t users = 0;
    std::int64_t shoppers = 0;
    std::int64_t purchases = 0;
    double spend = 0.0;
};

struct GroundTruth {
    std::vector<std::string> product_tokens;
    std::vector<std::uint32_t> product_group;  // indexed like product_tokens
    /// Effective next-receipt group matrix: stay with within_group_prob, else the kernel.
    std::vector<std::vector<double>> group_transition;
    /// Per cohort, the product with the largest expected purchase share.
    std::map<CohortKey, std::string> cohort_top_product;
    std::map<CohortKey, CohortTally> cohort_tally;
    /// Group of every emitted receipt, per user in emission order.
    std::map<std::string, std::vector<std::uint32_t>> receipt_groups;

    std::uint32_t group_of(const std::string& product_token) const;
};

struct GeneratedData {
    std::string receipts;  // receipt-log format
    std::string cohorts;   // cohort-file format
    GroundTruth truth;
};

/// Deterministic in `config.seed`. Throws Error on an invalid config.
GeneratedData generate(const GenConfig& config);

void validate(const GenConfig& config);

/// `product_token TAB group_id` per product.
void write_groups(const GroundTruth& truth, std::ostream& out);
/// Header `G`, then G rows of G decimals.
void write_transition_matrix(const std::vector<std::vector<double>>& matrix, std::ostream& out);
std::vector<std::vector<double>> read_transition_matrix(std::istream& in);

}  // namespace prodrec
