#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "prodrec/corpus.hpp"
#include "prodrec/recommend.hpp"

namespace httplib {
class Server;
}

namespace prodrec {

/// A store or snapshot needed to answer a request is not available.
class ServiceUnavailable : public Error {
public:
    using Error::Error;
};

/// Time source for the serving stores. now() never decreases.
class StoreClock {
public:
    virtual ~StoreClock() = default;
    virtual Timestamp now() const = 0;
};

/// Wall-clock seconds, clamped so that readings never go backwards.
class SystemClock final : public StoreClock {
public:
    Timestamp now() const override;

private:
    mutable std::atomic<Timestamp> last_{0};
};

/// Manually driven clock for tests and replays.
class ManualClock final : public StoreClock {
public:
    explicit ManualClock(Timestamp start = 0) : now_(start) {}
    Timestamp now() const override { return now_.load(); }
    /// Throws Error when `t` is earlier than the current reading.
    void set(Timestamp t);
    void advance(Timestamp seconds) { set(now() + seconds); }

private:
    std::atomic<Timestamp> now_;
};

struct ProfileEntry {
    std::string product;
    Timestamp time = 0;

    friend bool operator==(const ProfileEntry&, const ProfileEntry&) = default;
};

struct ProfileStoreOptions {
    std::int64_t ttl_days = 60;
    /// Directory holding the write-ahead log; in-memory only when empty.
    std::filesystem::path dir;
};

/// User -> purchases store. Entries whose age on the store clock reaches
/// ttl_days are never returned and are dropped by compact(). With a
/// directory, every put is appended to a write-ahead log that is replayed on
/// construction.
class ProfileStore {
public:
    ProfileStore(std::shared_ptr<const StoreClock> clock, ProfileStoreOptions options = {});
    ~ProfileStore();
    ProfileStore(const ProfileStore&) = delete;
    ProfileStore& operator=(const ProfileStore&) = delete;

    void put(const std::string& user, const std::vector<ProfileEntry>& purchases);
    /// Live purchases in insertion order; empty for an unknown user.
    std::vector<ProfileEntry> get(const std::string& user) const;
    /// Removes expired entries (and users left empty) and rewrites the log.
    /// Returns the number of entries removed.
    std::size_t compact();

    std::size_t num_users() const;
    std::int64_t ttl_seconds() const noexcept { return ttl_; }
    const StoreClock& clock() const noexcept { return *clock_; }

private:
    bool live(const ProfileEntry& e, Timestamp now) const { return now - e.time < ttl_; }
    void open_log();

    std::shared_ptr<const StoreClock> clock_;
    std::int64_t ttl_;
    std::filesystem::path dir_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, std::vector<ProfileEntry>> profiles_;
    std::ofstream log_;
};

struct PredictionSnapshot {
    std::uint64_t version = 0;
    TokenTable products;
    PredictionTable table;
};

struct PopularitySnapshot {
    std::uint64_t version = 0;
    TokenTable products;
    PopularityModel model;
};

/// Product -> predictions and cohort popularity key-spaces. Refreshes build a
/// complete snapshot, persist it to a new versioned directory and swap it in;
/// readers keep whichever snapshot they already hold. A refresh that fails
/// validation or I/O leaves the current snapshot in place.
class ModelStore {
public:
    /// With a data directory the latest complete versions on disk are loaded.
    explicit ModelStore(std::filesystem::path data_dir = {}, std::size_t fanout = 20);

    std::shared_ptr<const PredictionSnapshot> predictions() const;
    std::shared_ptr<const PopularitySnapshot> popularity() const;

    /// Returns the new version. Throws Error for rows that are not ordered by
    /// score, exceed the fan-out, or reference products outside `products`.
    std::uint64_t refresh_predictions(const TokenTable& products, PredictionTable table);
    /// Loads `product_token TAB rank TAB predicted_token TAB score` rows; the
    /// vocabulary comes from a vocabulary file.
    std::uint64_t refresh_predictions_from_files(const std::filesystem::path& vocabulary,
                                                 const std::filesystem::path& predictions);
    std::uint64_t refresh_popularity(const TokenTable& products, PopularityModel model);
    std::uint64_t refresh_popularity(const Corpus& corpus, const CohortMap& cohorts, Day computed_at,
                                     std::int64_t lookback_days, std::size_t list_size = 100);
    std::uint64_t refresh_popularity_from_files(const std::filesystem::path& vocabulary,
                                                const std::filesystem::path& popularity);

    std::uint64_t version() const noexcept { return version_.load(); }
    std::size_t fanout() const noexcept { return fanout_; }

private:
    std::filesystem::path data_dir_;
    std::size_t fanout_;
    std::mutex refresh_mutex_;
    mutable std::mutex swap_mutex_;
    std::shared_ptr<const PredictionSnapshot> predictions_;
    std::shared_ptr<const PopularitySnapshot> popularity_;
    std::atomic<std::uint64_t> version_{0};
};

struct ServiceConfig {
    double alpha = 0.9;
    std::size_t k = 20;
    bool exclude_purchased = true;
    std::uint64_t seed = 7;
};

struct ServedItem {
    std::string product;
    double score = 0.0;
    /// Product token, "user:<token>" or "cohort:<gender/age/state>".
    std::string source;

    friend bool operator==(const ServedItem&, const ServedItem&) = default;
};

struct ServedRecommendation {
    std::string user;
    Day day = 0;
    std::uint64_t model_version = 0;
    bool backfilled = false;
    std::vector<ServedItem> items;

    friend bool operator==(const ServedRecommendation&, const ServedRecommendation&) = default;
};

/// Cohort lookup by user token.
using CohortDirectory = std::unordered_map<std::string, CohortKey>;

class RecommendationService {
public:
    RecommendationService(const ProfileStore& profiles, const ModelStore& models, CohortDirectory cohorts,
                          ServiceConfig config = {});

    /// Live profile purchases before `day` feed the decayed daily merge over
    /// the prediction snapshot. Without usable history the user's cohort
    /// popularity list is served in an order shuffled by `request_seed`
    /// (default derived from the configured seed, user and day).
    /// Throws ServiceUnavailable when either snapshot is missing.
    ServedRecommendation recommend(const std::string& user, Day day, std::optional<std::size_t> k = std::nullopt,
                                   std::optional<std::uint64_t> request_seed = std::nullopt) const;

    const ServiceConfig& config() const noexcept { return config_; }

private:
    const ProfileStore& profiles_;
    const ModelStore& models_;
    CohortDirectory cohorts_;
    ServiceConfig config_;
    mutable std::atomic<std::uint64_t> last_version_{0};
};

std::string to_json(const ServedRecommendation& r);

/// `GET /recommend?user=&date=YYYY-MM-DD&k=[&seed=]` and `GET /health`.
class HttpServer {
public:
    explicit HttpServer(const RecommendationService& service);
    ~HttpServer();

    /// Binds and serves until stop(); returns false when binding fails.
    bool listen(const std::string& host, int port);
    /// Binds to a free port and returns it; serve with listen_after_bind().
    int bind_any_port(const std::string& host);
    bool listen_after_bind();
    void stop();

private:
    const RecommendationService& service_;
    std::unique_ptr<httplib::Server> server_;
};

}  // namespace prodrec
