#include "prodrec/serve.hpp"

#include <httplib.h>

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <functional>

#include <json.hpp>

#include "prodrec/detail/text.hpp"

namespace fs = std::filesystem;

namespace prodrec {

Timestamp SystemClock::now() const {
    auto t = std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
    Timestamp prev = last_.load();
    while (t > prev && !last_.compare_exchange_weak(prev, t)) {
    }
    return std::max<Timestamp>(t, prev);
}

void ManualClock::set(Timestamp t) {
    Timestamp prev = now_.load();
    do {
        if (t < prev) throw Error("store clock cannot move backwards");
    } while (!now_.compare_exchange_weak(prev, t));
}

// ---------------------------------------------------------------------------
// Profile store

namespace {

constexpr const char* kLogName = "profiles.wal";

void check_token(const std::string& s, const char* what) {
    if (s.empty() || s.find_first_of("\t\n\r") != std::string::npos)
        throw Error(std::string(what) + " must be non-empty and free of tabs and newlines");
}

}  // namespace

ProfileStore::ProfileStore(std::shared_ptr<const StoreClock> clock, ProfileStoreOptions options)
    : clock_(std::move(clock)), ttl_(options.ttl_days * kSecondsPerDay), dir_(std::move(options.dir)) {
    if (!clock_) throw Error("profile store needs a clock");
    if (options.ttl_days < 1) throw Error("ttl_days must be >= 1");
    if (dir_.empty()) return;
    fs::create_directories(dir_);
    std::ifstream in(dir_ / kLogName);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::split(line, '\t');
        Timestamp t = 0;
        if (f.size() != 3 || !detail::parse_int(f[2], t)) {
            // a torn final record from an interrupted append is discarded
            if (in.peek() == std::char_traits<char>::eof()) break;
            throw ParseError(line_no, "corrupt profile log record");
        }
        profiles_[std::string(f[0])].push_back({std::string(f[1]), t});
    }
    open_log();
}

ProfileStore::~ProfileStore() = default;

void ProfileStore::open_log() {
    log_.close();
    log_.clear();
    log_.open(dir_ / kLogName, std::ios::app);
    if (!log_) throw Error("cannot open profile log in " + dir_.string());
}

void ProfileStore::put(const std::string& user, const std::vector<ProfileEntry>& purchases) {
    check_token(user, "user token");
    for (const auto& e : purchases) check_token(e.product, "product token");
    std::unique_lock lock(mutex_);
    if (log_.is_open()) {
        for (const auto& e : purchases) log_ << user << '\t' << e.product << '\t' << e.time << '\n';
        log_.flush();
        if (!log_) throw ServiceUnavailable("profile log write failed");
    }
    auto& entries = profiles_[user];
    entries.insert(entries.end(), purchases.begin(), purchases.end());
}

std::vector<ProfileEntry> ProfileStore::get(const std::string& user) const {
    std::shared_lock lock(mutex_);
    std::vector<ProfileEntry> out;
    auto it = profiles_.find(user);
    if (it == profiles_.end()) return out;
    const Timestamp now = clock_->now();
    for (const auto& e : it->second)
        if (live(e, now)) out.push_back(e);
    return out;
}

std::size_t ProfileStore::compact() {
    std::unique_lock lock(mutex_);
    const Timestamp now = clock_->now();
    std::size_t removed = 0;
    for (auto it = profiles_.begin(); it != profiles_.end();) {
        auto& entries = it->second;
        auto keep = std::remove_if(entries.begin(), entries.end(), [&](const ProfileEntry& e) { return !live(e, now); });
        removed += static_cast<std::size_t>(entries.end() - keep);
        entries.erase(keep, entries.end());
        it = entries.empty() ? profiles_.erase(it) : std::next(it);
    }
    if (!dir_.empty()) {
        const auto tmp = dir_ / (std::string(kLogName) + ".tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            for (const auto& [user, entries] : profiles_)
                for (const auto& e : entries) out << user << '\t' << e.product << '\t' << e.time << '\n';
            if (!out.flush()) throw Error("cannot write compacted profile log");
        }
        log_.close();
        fs::rename(tmp, dir_ / kLogName);
        open_log();
    }
    return removed;
}

std::size_t ProfileStore::num_users() const {
    std::shared_lock lock(mutex_);
    return profiles_.size();
}

// ---------------------------------------------------------------------------
// Model store

namespace {

constexpr const char* kVocabFile = "vocabulary.tsv";
constexpr const char* kPredictionFile = "predictions.tsv";
constexpr const char* kPopularityFile = "popularity.tsv";

std::string version_name(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "v%06" PRIu64, v);
    return buf;
}

std::optional<std::uint64_t> parse_version_name(const std::string& name) {
    std::uint64_t v = 0;
    if (name.size() < 2 || name[0] != 'v' || !detail::parse_int(std::string_view(name).substr(1), v)) return std::nullopt;
    return v;
}

void write_token_vocabulary(const TokenTable& products, std::ostream& out) {
    Vocabulary vocab;
    vocab.products = products;
    vocab.counts.assign(products.size(), 0);
    vocab.median_prices.assign(products.size(), 0.0);
    write_vocabulary(vocab, out);
}

TokenTable read_token_vocabulary(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return read_vocabulary(in).products;
}

/// Writes files into a scratch directory and renames it into place, so a
/// version directory is either complete or absent.
void publish(const fs::path& root, std::uint64_t version,
             const std::vector<std::pair<std::string, std::function<void(std::ostream&)>>>& files) {
    if (root.empty()) return;
    fs::create_directories(root);
    const auto tmp = root / ("." + version_name(version) + ".tmp");
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    for (const auto& [name, write] : files) {
        std::ofstream out(tmp / name);
        write(out);
        if (!out.flush()) throw Error("cannot write " + (tmp / name).string());
    }
    fs::rename(tmp, root / version_name(version));
}

std::optional<std::pair<std::uint64_t, fs::path>> latest_version(const fs::path& root) {
    std::optional<std::pair<std::uint64_t, fs::path>> best;
    if (!fs::is_directory(root)) return best;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        auto v = parse_version_name(entry.path().filename().string());
        if (v && (!best || *v > best->first)) best = {{*v, entry.path()}};
    }
    return best;
}

void validate_predictions(const TokenTable& products, const PredictionTable& table, std::size_t fanout) {
    if (table.rows.size() != products.size()) throw Error("prediction table does not cover the vocabulary");
    for (const auto& row : table.rows) {
        if (row.size() > fanout) throw Error("prediction row exceeds the fan-out");
        for (std::size_t r = 0; r < row.size(); ++r) {
            if (row[r].product >= products.size()) throw Error("prediction references an unknown product");
            if (!std::isfinite(row[r].score)) throw Error("prediction score is not finite");
            if (r > 0 && row[r].score > row[r - 1].score) throw Error("prediction row is not ordered by score");
        }
    }
}

}  // namespace

ModelStore::ModelStore(fs::path data_dir, std::size_t fanout) : data_dir_(std::move(data_dir)), fanout_(fanout) {
    if (fanout_ < 1) throw Error("fan-out must be >= 1");
    if (data_dir_.empty()) return;
    fs::create_directories(data_dir_);
    std::uint64_t version = 0;
    if (auto latest = latest_version(data_dir_ / "predictions")) {
        auto products = read_token_vocabulary(latest->second / kVocabFile);
        std::ifstream in(latest->second / kPredictionFile);
        auto table = read_prediction_table(in, products, fanout_);
        predictions_ = std::make_shared<const PredictionSnapshot>(
            PredictionSnapshot{latest->first, std::move(products), std::move(table)});
        version = std::max(version, latest->first);
    }
    if (auto latest = latest_version(data_dir_ / "popularity")) {
        auto products = read_token_vocabulary(latest->second / kVocabFile);
        std::ifstream in(latest->second / kPopularityFile);
        auto model = read_popularity(in, products);
        popularity_ = std::make_shared<const PopularitySnapshot>(
            PopularitySnapshot{latest->first, std::move(products), std::move(model)});
        version = std::max(version, latest->first);
    }
    version_ = version;
}

std::shared_ptr<const PredictionSnapshot> ModelStore::predictions() const {
    std::lock_guard lock(swap_mutex_);
    return predictions_;
}

std::shared_ptr<const PopularitySnapshot> ModelStore::popularity() const {
    std::lock_guard lock(swap_mutex_);
    return popularity_;
}

std::uint64_t ModelStore::refresh_predictions(const TokenTable& products, PredictionTable table) {
    std::lock_guard refresh(refresh_mutex_);
    validate_predictions(products, table, fanout_);
    const std::uint64_t v = version_.load() + 1;
    auto snap = std::make_shared<const PredictionSnapshot>(PredictionSnapshot{v, products, std::move(table)});
    if (!data_dir_.empty())
        publish(data_dir_ / "predictions", v,
                {{kVocabFile, [&](std::ostream& o) { write_token_vocabulary(snap->products, o); }},
                 {kPredictionFile, [&](std::ostream& o) { write_prediction_table(snap->table, snap->products, o); }}});
    {
        std::lock_guard lock(swap_mutex_);
        predictions_ = std::move(snap);
    }
    version_ = v;
    return v;
}

std::uint64_t ModelStore::refresh_predictions_from_files(const fs::path& vocabulary, const fs::path& predictions) {
    auto products = read_token_vocabulary(vocabulary);
    std::ifstream in(predictions);
    if (!in) throw Error("cannot open " + predictions.string());
    auto table = read_prediction_table(in, products, fanout_);
    return refresh_predictions(products, std::move(table));
}

std::uint64_t ModelStore::refresh_popularity(const TokenTable& products, PopularityModel model) {
    std::lock_guard refresh(refresh_mutex_);
    if (model.num_products != products.size()) throw Error("popularity model does not match the vocabulary");
    auto check = [&](const RankedCounts& list) {
        for (const auto& [p, n] : list)
            if (p >= products.size()) throw Error("popularity list references an unknown product");
    };
    for (const auto* level : {&model.by_cohort, &model.by_age_gender, &model.by_gender})
        for (const auto& [key, list] : *level) check(list);
    check(model.global);
    const std::uint64_t v = version_.load() + 1;
    auto snap = std::make_shared<const PopularitySnapshot>(PopularitySnapshot{v, products, std::move(model)});
    if (!data_dir_.empty())
        publish(data_dir_ / "popularity", v,
                {{kVocabFile, [&](std::ostream& o) { write_token_vocabulary(snap->products, o); }},
                 {kPopularityFile, [&](std::ostream& o) { write_popularity(snap->model, snap->products, o); }}});
    {
        std::lock_guard lock(swap_mutex_);
        popularity_ = std::move(snap);
    }
    version_ = v;
    return v;
}

std::uint64_t ModelStore::refresh_popularity(const Corpus& corpus, const CohortMap& cohorts, Day computed_at,
                                             std::int64_t lookback_days, std::size_t list_size) {
    return refresh_popularity(corpus.vocab.products, popular_train(corpus, cohorts, computed_at, lookback_days, list_size));
}

std::uint64_t ModelStore::refresh_popularity_from_files(const fs::path& vocabulary, const fs::path& popularity) {
    auto products = read_token_vocabulary(vocabulary);
    std::ifstream in(popularity);
    if (!in) throw Error("cannot open " + popularity.string());
    return refresh_popularity(products, read_popularity(in, products));
}

// ---------------------------------------------------------------------------
// Endpoint

RecommendationService::RecommendationService(const ProfileStore& profiles, const ModelStore& models,
                                             CohortDirectory cohorts, ServiceConfig config)
    : profiles_(profiles), models_(models), cohorts_(std::move(cohorts)), config_(config) {
    if (!(config_.alpha > 0 && config_.alpha <= 1)) throw Error("alpha must lie in (0, 1]");
    if (config_.k < 1) throw Error("K must be >= 1");
}

ServedRecommendation RecommendationService::recommend(const std::string& user, Day day, std::optional<std::size_t> k,
                                                      std::optional<std::uint64_t> request_seed) const {
    const std::size_t budget = k.value_or(config_.k);
    if (budget < 1) throw Error("K must be >= 1");
    auto predictions = models_.predictions();
    auto popularity = models_.popularity();
    if (!predictions) throw ServiceUnavailable("prediction store is not loaded");
    if (!popularity) throw ServiceUnavailable("popularity store is not loaded");

    ServedRecommendation out;
    out.user = user;
    out.day = day;
    out.model_version = std::max(predictions->version, popularity->version);
    // a reader that raced a refresh must not report an older tag than one already served
    std::uint64_t seen = last_version_.load();
    while (seen < out.model_version && !last_version_.compare_exchange_weak(seen, out.model_version)) {
    }
    out.model_version = std::max(out.model_version, seen);

    std::vector<Purchase> history;
    const Timestamp cutoff = day_start(day);
    for (const auto& e : profiles_.get(user)) {
        if (e.time >= cutoff) continue;
        if (auto p = predictions->products.find(e.product)) history.push_back({*p, e.time});
    }
    if (!history.empty()) {
        auto daily = decayed_daily(history, predictions->table.as_recommender(), day,
                                   {config_.alpha, budget, config_.exclude_purchased});
        for (const auto& item : daily.items)
            out.items.push_back({predictions->products.token(item.product), item.score,
                                 predictions->products.token(item.source.id)});
    }
    if (out.items.empty()) {
        out.backfilled = true;
        auto it = cohorts_.find(user);
        const CohortKey cohort = it == cohorts_.end() ? CohortKey{} : it->second;
        const std::uint64_t seed =
            request_seed.value_or(mix64(config_.seed, std::hash<std::string>{}(user), static_cast<std::uint64_t>(day)));
        for (const auto& item : popular_recommend(popularity->model, cohort, budget, seed))
            out.items.push_back({popularity->products.token(item.product), item.score,
                                 "cohort:" + to_string(item.source.cohort)});
    }
    return out;
}

std::string to_json(const ServedRecommendation& r) {
    nlohmann::ordered_json j;
    j["user"] = r.user;
    j["date"] = format_date(r.day);
    j["model_version"] = r.model_version;
    auto& items = j["items"] = nlohmann::ordered_json::array();
    for (const auto& item : r.items) items.push_back({{"product", item.product}, {"score", item.score}, {"source", item.source}});
    return j.dump();
}

// ---------------------------------------------------------------------------
// HTTP

HttpServer::HttpServer(const RecommendationService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
    auto error = [](httplib::Response& res, int status, const std::string& message) {
        res.status = status;
        res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
    };
    server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });
    server_->Get("/recommend", [this, error](const httplib::Request& req, httplib::Response& res) {
        try {
            if (!req.has_param("user") || !req.has_param("date")) return error(res, 400, "user and date are required");
            const std::string user = req.get_param_value("user");
            const Day day = parse_date(req.get_param_value("date"));
            std::optional<std::size_t> k;
            std::optional<std::uint64_t> seed;
            if (req.has_param("k")) {
                std::size_t v = 0;
                if (!detail::parse_int(req.get_param_value("k"), v) || v < 1) return error(res, 400, "k must be a positive integer");
                k = v;
            }
            if (req.has_param("seed")) {
                std::uint64_t v = 0;
                if (!detail::parse_int(req.get_param_value("seed"), v)) return error(res, 400, "seed must be an unsigned integer");
                seed = v;
            }
            res.set_content(to_json(service_.recommend(user, day, k, seed)), "application/json");
        } catch (const ServiceUnavailable& e) {
            error(res, 503, e.what());
        } catch (const Error& e) {
            error(res, 400, e.what());
        }
    });
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::listen(const std::string& host, int port) { return server_->listen(host, port); }

int HttpServer::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool HttpServer::listen_after_bind() { return server_->listen_after_bind(); }

void HttpServer::stop() {
    if (server_) server_->stop();
}

}  // namespace prodrec
