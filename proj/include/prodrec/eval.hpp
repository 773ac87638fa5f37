#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prodrec/corpus.hpp"
#include "prodrec/recommend.hpp"

namespace prodrec {

struct EvalConfig {
    std::size_t k = 20;
    /// Aggregation windows in days from the first test day; ascending.
    std::vector<std::int64_t> horizons{1, 3, 7, 15, 30};
    /// Decay handed to recommender factories (evaluate itself does not decay).
    double alpha = 0.9;
    std::int64_t refresh_days = 3;
    std::int64_t lookback_days = 5;
    std::size_t popularity_list_size = 100;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    bool per_user = false;
    /// First test day; defaults to the day of the earliest test purchase.
    std::optional<Day> start_day;

    void validate() const;
};

struct Tally {
    std::int64_t hits = 0;
    std::int64_t total = 0;
    /// Purchases whose day's list came from popularity back-fill.
    std::int64_t backfilled = 0;

    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }
    Tally& operator+=(const Tally& o) {
        hits += o.hits;
        total += o.total;
        backfilled += o.backfilled;
        return *this;
    }
    friend bool operator==(const Tally&, const Tally&) = default;
};

struct EvalReport {
    std::string recommender;
    Day start_day = 0;
    /// Keyed by day offset from start_day (0 is the first test day).
    std::map<std::int64_t, Tally> days;
    /// Keyed by horizon length in days.
    std::map<std::int64_t, Tally> horizons;
    Tally overall;
    std::map<UserId, Tally> users;  // filled when EvalConfig::per_user is set

    double backfill_fraction() const {
        return overall.total == 0 ? 0.0 : static_cast<double>(overall.backfilled) / static_cast<double>(overall.total);
    }
    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Scores a daily K-budget recommender over the test period. For each test
/// day and user the request carries every purchase strictly before that day
/// (train plus earlier test days) and a popularity model refreshed every
/// refresh_days over train+test with computed_at <= day. Users for whom the
/// recommender returns nothing are back-filled with cohort popularity. Test
/// purchases outside the train vocabulary (Corpus::dropped) are misses.
/// Throws Error when the test period does not start strictly after train.
EvalReport evaluate(const Recommender& recommender, const Corpus& train, const Corpus& test, const CohortMap& cohorts,
                    const EvalConfig& config);

/// `day TAB accuracy TAB hits TAB total` with 1-based day offsets.
void write_report_tsv(const EvalReport& report, std::ostream& out);
std::string report_json(const EvalReport& report);

enum class SweepParameter { alpha, lookback, refresh };

std::string_view to_string(SweepParameter p);
SweepParameter parse_sweep_parameter(std::string_view s);

struct SweepPoint {
    double value = 0.0;
    EvalReport report;
};

/// Builds the recommender for one grid point; sees the overridden config.
using RecommenderFactory = std::function<std::unique_ptr<Recommender>(const EvalConfig&)>;

/// One evaluate run per grid value with the chosen parameter overridden.
std::vector<SweepPoint> sweep(const RecommenderFactory& factory, SweepParameter parameter,
                              const std::vector<double>& grid, const Corpus& train, const Corpus& test,
                              const CohortMap& cohorts, const EvalConfig& config);

/// Header `parameter TAB value TAB h<horizon>...`, one row per grid point.
void write_sweep_tsv(SweepParameter parameter, const std::vector<SweepPoint>& points, const EvalConfig& config,
                     std::ostream& out);

}  // namespace prodrec
