#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "prodrec/types.hpp"

namespace prodrec {

struct Receipt {
    Timestamp timestamp = 0;
    std::vector<ProductId> products;
    std::vector<double> prices;  // aligned with products

    friend bool operator==(const Receipt&, const Receipt&) = default;
};

/// One user's receipts, ascending by timestamp (ties keep input order).
struct UserLog {
    UserId user = 0;
    std::vector<Receipt> receipts;

    friend bool operator==(const UserLog&, const UserLog&) = default;
};

/// Product vocabulary. Ids are assigned by descending purchase count, ties by token.
struct Vocabulary {
    TokenTable products;
    std::vector<std::int64_t> counts;
    std::vector<double> median_prices;
    std::int64_t min_count = 1;
    double min_price = 0.0;

    std::size_t size() const noexcept { return products.size(); }

    friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

/// A purchase whose product is outside the vocabulary it was mapped onto.
struct DroppedPurchase {
    UserId user = 0;
    Timestamp timestamp = 0;
    std::string product;

    friend bool operator==(const DroppedPurchase&, const DroppedPurchase&) = default;
};

struct Corpus {
    std::vector<UserLog> logs;  // ascending by user id, one per user with receipts
    Vocabulary vocab;
    TokenTable users;
    std::vector<DroppedPurchase> dropped;

    const UserLog* find(UserId user) const;
    std::size_t num_receipts() const;
    std::size_t num_purchases() const;

    friend bool operator==(const Corpus&, const Corpus&) = default;
};

enum class Gender : std::uint8_t { unknown, male, female };

enum class AgeBucket : std::uint8_t {
    unknown,
    age_18_20,
    age_21_24,
    age_25_29,
    age_30_34,
    age_35_39,
    age_40_44,
    age_45_49,
    age_50_plus,
};

/// (gender, age bucket, state) user segment. An empty state means unknown.
struct CohortKey {
    Gender gender = Gender::unknown;
    AgeBucket age = AgeBucket::unknown;
    std::string state;

    auto operator<=>(const CohortKey&) const = default;
    bool operator==(const CohortKey&) const = default;
};

std::string_view to_string(Gender g);
std::string_view to_string(AgeBucket a);
Gender parse_gender(std::string_view s);
AgeBucket parse_age_bucket(std::string_view s);
/// "gender/age/state" with '-' for unknown fields.
std::string to_string(const CohortKey& key);
CohortKey parse_cohort(std::string_view s);

using CohortMap = std::unordered_map<UserId, CohortKey>;

/// Cohort of `user`, all-unknown when absent.
const CohortKey& cohort_of(const CohortMap& cohorts, UserId user);

struct ParsedLogs {
    Corpus corpus;
    CohortMap cohorts;
};

/// Reads the receipt log (and optionally the cohort file). Users that only
/// appear in the cohort file are added to the user table without a log.
ParsedLogs parse_logs(std::istream& receipts, std::istream* cohorts = nullptr);
ParsedLogs parse_logs(std::string_view receipts_text, std::string_view cohorts_text = {});

void write_logs(const Corpus& corpus, std::ostream& out);
void write_cohorts(const Corpus& corpus, const CohortMap& cohorts, std::ostream& out);

/// Keeps products with count >= min_count and median price >= min_price.
/// Throws Error when nothing survives.
Vocabulary build_vocabulary(const Corpus& raw, std::int64_t min_count, double min_price);

/// Re-indexes `raw` onto `vocab`. Purchases of products outside `vocab` are
/// recorded in `dropped`; receipts left empty are removed.
Corpus apply_vocabulary(const Corpus& raw, const Vocabulary& vocab);

void write_vocabulary(const Vocabulary& vocab, std::ostream& out);
Vocabulary read_vocabulary(std::istream& in);

struct TimeSplit {
    Corpus train;
    Corpus test;
};

/// Receipts before `cutoff` go to train, the rest to test. Both halves keep
/// the input vocabulary and user table.
TimeSplit split_by_time(const Corpus& corpus, Timestamp cutoff);

/// Splits raw logs at `cutoff`, builds the vocabulary from the train half
/// only and maps both halves onto it. Test purchases of products outside that
/// vocabulary end up in test.dropped.
TimeSplit split_with_train_vocabulary(const Corpus& raw, Timestamp cutoff, std::int64_t min_count, double min_price);

/// Merges two corpora over the same vocabulary and user table.
Corpus merge(const Corpus& a, const Corpus& b);

struct CohortStats {
    std::int64_t online_users = 0;
    std::int64_t shoppers = 0;
    std::int64_t purchases = 0;
    double spend = 0.0;

    double pct_shoppers = 0.0;
    double avg_purchases = 0.0;
    double avg_spend = 0.0;
    double avg_item_price = 0.0;
};

/// Per-cohort shopping statistics. Throws Error when a cohort with shoppers
/// has no entry in `online_users`.
std::map<CohortKey, CohortStats> cohort_stats(const Corpus& corpus, const CohortMap& cohorts,
                                              const std::map<CohortKey, std::int64_t>& online_users);

struct FlatPurchase {
    ProductId product = 0;
    Timestamp timestamp = 0;
    std::uint32_t receipt = 0;  // index into UserLog::receipts
};

/// Concatenates a user's receipts in time order. Products inside a receipt
/// are shuffled by a permutation keyed on (seed, user, receipt index).
std::vector<FlatPurchase> flatten(const UserLog& log, std::uint64_t seed);

}  // namespace prodrec
