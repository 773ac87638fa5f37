#include <doctest.h>

#include <cmath>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "prodrec/datagen.hpp"
#include "prodrec/eval.hpp"
#include "testing.hpp"

using namespace prodrec;
using prodrec::testing::corpus_of;

namespace {

/// Recommends exactly what the user buys on the requested day.
class OracleRecommender final : public Recommender {
public:
    explicit OracleRecommender(const Corpus& test) : test_(test) {}
    std::string name() const override { return "oracle"; }
    std::vector<ScoredProduct> recommend(const RecommendRequest& request) const override {
        std::vector<ScoredProduct> out;
        std::set<ProductId> seen;
        if (const auto* log = test_.find(request.user))
            for (const auto& r : log->receipts)
                if (day_of(r.timestamp) == request.day)
                    for (auto p : r.products)
                        if (seen.insert(p).second) out.push_back({p, 1.0, {}, 0});
        return out;
    }

private:
    const Corpus& test_;
};

/// Returns nothing, so every list is popularity back-fill.
class SilentRecommender final : public Recommender {
public:
    std::string name() const override { return "silent"; }
    std::vector<ScoredProduct> recommend(const RecommendRequest&) const override { return {}; }
};

/// Wraps another recommender and records what each request could see.
class Spy final : public Recommender {
public:
    explicit Spy(const Recommender& inner) : inner_(inner) {}
    std::string name() const override { return inner_.name(); }
    std::vector<ScoredProduct> recommend(const RecommendRequest& request) const override {
        {
            std::lock_guard lock(mu_);
            requests.push_back({request.user, request.day, std::vector<Purchase>(request.history.begin(), request.history.end()),
                                request.popularity ? request.popularity->computed_at : std::optional<Day>{},
                                request.popularity ? request.popularity->lookback_days : 0});
        }
        return inner_.recommend(request);
    }

    struct Seen {
        UserId user;
        Day day;
        std::vector<Purchase> history;
        std::optional<Day> popularity_at;
        std::int64_t lookback;
    };
    mutable std::vector<Seen> requests;

private:
    const Recommender& inner_;
    mutable std::mutex mu_;
};

struct Split {
    ParsedLogs parsed;
    TimeSplit halves;
};

Split generated_split(GenConfig gen, const char* split_date = "2014-06-01") {
    Split s;
    auto data = generate(gen);
    s.parsed = parse_logs(data.receipts, data.cohorts);
    s.halves = split_with_train_vocabulary(s.parsed.corpus, day_start(parse_date(split_date)), 1, 0.0);
    return s;
}

std::unique_ptr<Recommender> topk_recommender(const EmbeddingModel& model, const CosineIndex& index, double alpha) {
    ProductRecommender base = [&index](ProductId q, std::size_t k) { return topk_similar(index, q, k); };
    return std::make_unique<DecayedRecommender>("prod2vec-topk", base, model.size(), alpha);
}

}  // namespace

TEST_CASE("an oracle recommender scores 1.0 every day") {
    GenConfig gen;
    gen.num_users = 300;
    auto s = generated_split(gen);
    // keep the vocabulary identical across halves so no purchase is dropped
    auto halves = split_by_time(s.parsed.corpus, day_start(parse_date("2014-06-01")));
    OracleRecommender oracle(halves.test);
    auto report = evaluate(oracle, halves.train, halves.test, s.parsed.cohorts, {});
    REQUIRE(report.overall.total > 0);
    for (const auto& [d, t] : report.days) CHECK(t.accuracy() == 1.0);
    for (const auto& [h, t] : report.horizons) CHECK(t.accuracy() == 1.0);
    CHECK(report.backfill_fraction() == 0.0);
    CHECK(report.recommender == "oracle");
}

TEST_CASE("uniform random recommendations hit at rate K/P") {
    GenConfig gen;
    gen.num_users = 3000;
    gen.num_products = 1000;
    gen.num_groups = 10;
    auto s = generated_split(gen);
    const auto& train = s.halves.train;
    const auto& test = s.halves.test;
    REQUIRE(train.vocab.size() == 1000);
    RandomRecommender random(train.vocab.size(), 5);
    EvalConfig cfg;
    auto report = evaluate(random, train, test, s.parsed.cohorts, cfg);
    REQUIRE(report.overall.total >= 10000);
    const double p = 20.0 / 1000.0;
    auto within = [&](const Tally& t) {
        double sigma = std::sqrt(p * (1 - p) / static_cast<double>(t.total));
        return std::abs(t.accuracy() - p) <= 3 * sigma;
    };
    CHECK(within(report.overall));
    CHECK(within(report.days.at(0)));
}

TEST_CASE("overlapping train and test ranges are rejected") {
    auto c = corpus_of("u1\t100\tA\t5\nu1\t200\tB\t5\n");
    auto halves = split_by_time(c, 150);
    SilentRecommender silent;
    CHECK_THROWS_AS(evaluate(silent, halves.test, halves.train, {}, {}), Error);
    CHECK_THROWS_AS(evaluate(silent, c, halves.test, {}, {}), Error);
    CHECK_NOTHROW(evaluate(silent, halves.train, halves.test, {}, {}));
}

TEST_CASE("invalid configurations are rejected") {
    EvalConfig cfg;
    cfg.horizons = {1, 7, 3};
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.k = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.alpha = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("requests see exactly the purchases before the day") {
    GenConfig gen;
    gen.num_users = 200;
    auto s = generated_split(gen);
    const auto& train = s.halves.train;
    const auto& test = s.halves.test;
    TrainConfig tc;
    tc.dim = 8;
    tc.epochs = 1;
    auto model = train_prod2vec(train, tc);
    CosineIndex index(model);
    auto inner = topk_recommender(model, index, 0.9);
    Spy spy(*inner);
    EvalConfig cfg;
    cfg.refresh_days = 3;
    auto report = evaluate(spy, train, test, s.parsed.cohorts, cfg);
    REQUIRE_FALSE(spy.requests.empty());

    auto all = merge(train, test);
    for (const auto& seen : spy.requests) {
        const Timestamp cutoff = day_start(seen.day);
        std::vector<std::pair<Timestamp, ProductId>> expected;
        if (const auto* log = all.find(seen.user))
            for (const auto& r : log->receipts)
                if (r.timestamp < cutoff)
                    for (auto p : r.products) expected.emplace_back(r.timestamp, p);
        std::vector<std::pair<Timestamp, ProductId>> got;
        for (const auto& h : seen.history) {
            REQUIRE(h.time < cutoff);
            got.emplace_back(h.time, h.product);
        }
        REQUIRE(std::is_sorted(got.begin(), got.end(),
                               [](const auto& a, const auto& b) { return a.first < b.first; }));
        std::sort(expected.begin(), expected.end());
        std::sort(got.begin(), got.end());
        REQUIRE(got == expected);
        REQUIRE(seen.popularity_at.has_value());
        REQUIRE(*seen.popularity_at <= seen.day);
        REQUIRE(seen.day - *seen.popularity_at < cfg.refresh_days);
        REQUIRE((*seen.popularity_at - report.start_day) % cfg.refresh_days == 0);
    }
}

TEST_CASE("tallies, horizons and back-fill") {
    const Day d0 = 16000;
    auto ts = [&](Day d) { return std::to_string(day_start(d) + 100); };
    auto parsed = parse_logs("u1\t" + ts(d0 - 2) + "\tA,B\t5,5\n"
                             "u2\t" + ts(d0 - 1) + "\tA\t5\n"
                             "u1\t" + ts(d0) + "\tA,C\t5,5\n"
                             "u3\t" + ts(d0) + "\tA\t5\n"
                             "u1\t" + ts(d0 + 2) + "\tB,D\t5,5\n");
    auto halves = split_with_train_vocabulary(parsed.corpus, day_start(d0), 1, 0.0);
    REQUIRE(halves.test.dropped.size() == 2);  // C and D never appear in train

    // only u1 gets its own list: {B}; u3 has no history and is back-filled
    class FixedRecommender final : public Recommender {
    public:
        explicit FixedRecommender(ProductId p) : p_(p) {}
        std::string name() const override { return "fixed"; }
        std::vector<ScoredProduct> recommend(const RecommendRequest& r) const override {
            if (r.history.empty()) return {};
            return {{p_, 1.0, {}, 0}};
        }

    private:
        ProductId p_;
    };
    const auto& vocab = halves.train.vocab.products;
    FixedRecommender rec(vocab.at("B"));
    EvalConfig cfg;
    cfg.k = 1;
    cfg.horizons = {1, 3};
    cfg.per_user = true;
    auto report = evaluate(rec, halves.train, halves.test, parsed.cohorts, cfg);
    CHECK(report.start_day == d0);
    // day 0: u1 buys A (miss) and C (dropped miss); u3 buys A, back-filled with the top product A (hit)
    CHECK(report.days.at(0) == Tally{1, 3, 1});
    // day 2: u1 buys B (hit) and D (dropped miss)
    CHECK(report.days.at(2) == Tally{1, 2, 0});
    CHECK(report.horizons.at(1) == Tally{1, 3, 1});
    CHECK(report.horizons.at(3) == Tally{2, 5, 1});
    CHECK(report.overall == Tally{2, 5, 1});
    CHECK(report.backfill_fraction() == doctest::Approx(0.2));
    CHECK(report.users.at(parsed.corpus.users.at("u1")) == Tally{1, 4, 0});

    std::ostringstream tsv;
    write_report_tsv(report, tsv);
    CHECK(tsv.str() == "day\taccuracy\thits\ttotal\n1\t0.3333333333333333\t1\t3\n3\t0.5\t1\t2\n");
    auto j = nlohmann::json::parse(report_json(report));
    CHECK(j["total"] == 5);
    CHECK(j["horizons"][1]["days"] == 3);
    CHECK(j["days"][0]["backfilled"] == 1);
}

TEST_CASE("an empty test set reports zero totals") {
    auto c = corpus_of("u1\t100\tA\t5\nu1\t200\tB\t5\n");
    auto halves = split_by_time(c, 1000);
    SilentRecommender silent;
    auto report = evaluate(silent, halves.train, halves.test, {}, {});
    CHECK(report.overall.total == 0);
    CHECK(report.horizons.size() == 5);
}

TEST_CASE("reports are deterministic and independent of worker count") {
    GenConfig gen;
    gen.num_users = 400;
    auto s = generated_split(gen);
    TrainConfig tc;
    tc.dim = 16;
    tc.epochs = 2;
    auto model = train_prod2vec(s.halves.train, tc);
    CosineIndex index(model);
    auto rec = topk_recommender(model, index, 0.9);
    EvalConfig cfg;
    cfg.per_user = true;
    auto a = evaluate(*rec, s.halves.train, s.halves.test, s.parsed.cohorts, cfg);
    auto b = evaluate(*rec, s.halves.train, s.halves.test, s.parsed.cohorts, cfg);
    CHECK(a == b);
    cfg.workers = 4;
    auto c = evaluate(*rec, s.halves.train, s.halves.test, s.parsed.cohorts, cfg);
    CHECK(a == c);
    for (const auto& [d, t] : a.days) {
        CHECK(t.hits <= t.total);
        CHECK(t.accuracy() >= 0.0);
        CHECK(t.accuracy() <= 1.0);
    }
}

TEST_CASE("removing a user leaves other non-back-filled users unchanged") {
    GenConfig gen;
    gen.num_users = 200;
    auto s = generated_split(gen);
    TrainConfig tc;
    tc.dim = 8;
    tc.epochs = 1;
    auto model = train_prod2vec(s.halves.train, tc);
    CosineIndex index(model);
    auto rec = topk_recommender(model, index, 0.9);
    EvalConfig cfg;
    cfg.per_user = true;
    auto full = evaluate(*rec, s.halves.train, s.halves.test, s.parsed.cohorts, cfg);
    REQUIRE(full.users.size() > 10);

    detail::Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        auto test = s.halves.test;
        auto victim = test.logs[detail::uniform_below(rng, test.logs.size())].user;
        std::erase_if(test.logs, [&](const UserLog& l) { return l.user == victim; });
        std::erase_if(test.dropped, [&](const DroppedPurchase& d) { return d.user == victim; });
        auto reduced = evaluate(*rec, s.halves.train, test, s.parsed.cohorts, cfg);
        CHECK(reduced.users.count(victim) == 0);
        for (const auto& [user, tally] : reduced.users)
            if (tally.backfilled == 0) CHECK(tally == full.users.at(user));
    }
}

TEST_CASE("a one-point sweep equals a single evaluation") {
    GenConfig gen;
    gen.num_users = 200;
    auto s = generated_split(gen);
    TrainConfig tc;
    tc.dim = 8;
    tc.epochs = 1;
    auto model = train_prod2vec(s.halves.train, tc);
    CosineIndex index(model);
    std::vector<double> alphas_seen;
    RecommenderFactory factory = [&](const EvalConfig& c) {
        alphas_seen.push_back(c.alpha);
        return topk_recommender(model, index, c.alpha);
    };
    EvalConfig cfg;
    auto points = sweep(factory, SweepParameter::alpha, {0.5}, s.halves.train, s.halves.test, s.parsed.cohorts, cfg);
    REQUIRE(points.size() == 1);
    cfg.alpha = 0.5;
    auto direct = evaluate(*topk_recommender(model, index, 0.5), s.halves.train, s.halves.test, s.parsed.cohorts, cfg);
    CHECK(points[0].report == direct);
    CHECK(alphas_seen == std::vector<double>{0.5});

    std::ostringstream out;
    write_sweep_tsv(SweepParameter::alpha, points, cfg, out);
    auto header = out.str().substr(0, out.str().find('\n'));
    CHECK(header == "parameter\tvalue\th1\th3\th7\th15\th30");
    CHECK(out.str().find("\nalpha\t0.5\t") != std::string::npos);
}

TEST_CASE("lookback and refresh sweeps reach the popularity models") {
    GenConfig gen;
    gen.num_users = 150;
    auto s = generated_split(gen);
    SilentRecommender silent;
    Spy spy(silent);
    RecommenderFactory factory = [&](const EvalConfig&) { return std::make_unique<Spy>(silent); };
    auto points = sweep(factory, SweepParameter::lookback, {2, 10}, s.halves.train, s.halves.test, s.parsed.cohorts, {});
    REQUIRE(points.size() == 2);
    CHECK_FALSE(points[0].report == points[1].report);
    CHECK(points[0].report.backfill_fraction() == 1.0);

    EvalConfig cfg;
    cfg.refresh_days = 7;
    evaluate(spy, s.halves.train, s.halves.test, s.parsed.cohorts, cfg);
    for (const auto& seen : spy.requests) CHECK(seen.day - *seen.popularity_at < 7);
    CHECK_THROWS_AS(sweep(factory, SweepParameter::refresh, {1.5}, s.halves.train, s.halves.test, s.parsed.cohorts, {}),
                    Error);
    CHECK(parse_sweep_parameter("lookback") == SweepParameter::lookback);
    CHECK_THROWS_AS(parse_sweep_parameter("beta"), Error);
}
