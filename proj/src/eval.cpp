#include "prodrec/eval.hpp"

#include <algorithm>
#include <limits>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "prodrec/detail/text.hpp"

namespace prodrec {

void EvalConfig::validate() const {
    if (k < 1) throw Error("K must be >= 1");
    if (horizons.empty()) throw Error("at least one horizon is required");
    for (std::size_t i = 0; i < horizons.size(); ++i) {
        if (horizons[i] < 1) throw Error("horizons must be >= 1 day");
        if (i > 0 && horizons[i] <= horizons[i - 1]) throw Error("horizons must be strictly ascending");
    }
    if (!(alpha > 0 && alpha <= 1)) throw Error("alpha must lie in (0, 1]");
    if (refresh_days < 1) throw Error("refresh_days must be >= 1");
    if (lookback_days < 1) throw Error("lookback_days must be >= 1");
    if (popularity_list_size < 1) throw Error("popularity_list_size must be >= 1");
}

namespace {

struct TestDay {
    Day day = 0;
    std::vector<std::optional<ProductId>> purchases;  // nullopt: outside the vocabulary
};

struct UserCase {
    UserId user = 0;
    std::vector<Purchase> history;  // train and test purchases, ascending by time
    std::vector<TestDay> days;      // ascending
};

std::pair<Timestamp, Timestamp> time_range(const Corpus& c) {
    Timestamp lo = std::numeric_limits<Timestamp>::max();
    Timestamp hi = std::numeric_limits<Timestamp>::min();
    for (const auto& log : c.logs)
        for (const auto& r : log.receipts) {
            lo = std::min(lo, r.timestamp);
            hi = std::max(hi, r.timestamp);
        }
    for (const auto& d : c.dropped) {
        lo = std::min(lo, d.timestamp);
        hi = std::max(hi, d.timestamp);
    }
    return {lo, hi};
}

std::vector<UserCase> build_cases(const Corpus& train, const Corpus& test) {
    std::map<UserId, UserCase> cases;
    std::map<UserId, std::map<Day, TestDay>> days;
    for (const auto& log : test.logs)
        for (const auto& r : log.receipts) {
            auto& td = days[log.user][day_of(r.timestamp)];
            for (auto p : r.products) td.purchases.emplace_back(p);
        }
    for (const auto& d : test.dropped) days[d.user][day_of(d.timestamp)].purchases.emplace_back(std::nullopt);

    for (auto& [user, by_day] : days) {
        auto& uc = cases[user];
        uc.user = user;
        for (auto& [day, td] : by_day) {
            td.day = day;
            uc.days.push_back(std::move(td));
        }
        for (const Corpus* c : {&train, &test})
            if (const auto* log = c->find(user))
                for (const auto& r : log->receipts)
                    for (auto p : r.products) uc.history.push_back({p, r.timestamp});
        std::stable_sort(uc.history.begin(), uc.history.end(),
                         [](const Purchase& a, const Purchase& b) { return a.time < b.time; });
    }
    std::vector<UserCase> out;
    out.reserve(cases.size());
    for (auto& [u, uc] : cases) out.push_back(std::move(uc));
    return out;
}

struct Partial {
    std::map<std::int64_t, Tally> days;
    std::map<UserId, Tally> users;
};

}  // namespace

EvalReport evaluate(const Recommender& recommender, const Corpus& train, const Corpus& test, const CohortMap& cohorts,
                    const EvalConfig& config) {
    config.validate();
    if (train.vocab.size() != test.vocab.size()) throw Error("train and test corpora must share one vocabulary");

    EvalReport report;
    report.recommender = recommender.name();
    const auto [train_lo, train_hi] = time_range(train);
    const auto [test_lo, test_hi] = time_range(test);
    if (test_lo == std::numeric_limits<Timestamp>::max()) {
        report.start_day = config.start_day.value_or(0);
        for (auto h : config.horizons) report.horizons[h] = {};
        return report;
    }
    if (train_hi != std::numeric_limits<Timestamp>::min() && train_hi >= test_lo)
        throw Error("train and test time ranges overlap");
    (void)train_lo;
    (void)test_hi;

    const Day start = config.start_day.value_or(day_of(test_lo));
    report.start_day = start;
    auto cases = build_cases(train, test);

    // popularity snapshots at every refresh point the test period touches
    const Corpus all = merge(train, test);
    auto refresh_point = [&](Day d) {
        std::int64_t offset = d - start;
        std::int64_t steps = offset >= 0 ? offset / config.refresh_days : -((-offset + config.refresh_days - 1) / config.refresh_days);
        return start + steps * config.refresh_days;
    };
    std::map<Day, PopularityModel> popularity;
    for (const auto& uc : cases)
        for (const auto& td : uc.days)
            if (td.day >= start) popularity.try_emplace(refresh_point(td.day));
    for (auto& [at, model] : popularity)
        model = popular_train(all, cohorts, at, config.lookback_days, config.popularity_list_size);

    auto run = [&](std::size_t first, std::size_t stride, Partial& part) {
        std::vector<ProductId> chosen;
        for (std::size_t i = first; i < cases.size(); i += stride) {
            const auto& uc = cases[i];
            const auto& cohort = cohort_of(cohorts, uc.user);
            for (const auto& td : uc.days) {
                if (td.day < start) continue;
                const Timestamp cutoff = day_start(td.day);
                auto end = std::lower_bound(uc.history.begin(), uc.history.end(), cutoff,
                                            [](const Purchase& p, Timestamp t) { return p.time < t; });
                RecommendRequest request;
                request.user = uc.user;
                request.history = std::span<const Purchase>(uc.history.data(), static_cast<std::size_t>(end - uc.history.begin()));
                request.day = td.day;
                request.cohort = cohort;
                request.popularity = &popularity.at(refresh_point(td.day));
                request.k = config.k;

                auto items = recommender.recommend(request);
                bool backfilled = false;
                if (items.empty()) {
                    items = popular_recommend(*request.popularity, cohort, config.k);
                    backfilled = true;
                }
                chosen.clear();
                for (const auto& item : items) chosen.push_back(item.product);
                std::sort(chosen.begin(), chosen.end());
                chosen.erase(std::unique(chosen.begin(), chosen.end()), chosen.end());
                if (chosen.size() > config.k) {
                    // keep the recommender's own top-k when it overshoots the budget
                    chosen.clear();
                    for (const auto& item : items) {
                        if (std::find(chosen.begin(), chosen.end(), item.product) == chosen.end())
                            chosen.push_back(item.product);
                        if (chosen.size() == config.k) break;
                    }
                    std::sort(chosen.begin(), chosen.end());
                }

                Tally t;
                for (const auto& p : td.purchases) {
                    ++t.total;
                    if (p && std::binary_search(chosen.begin(), chosen.end(), *p)) ++t.hits;
                }
                if (backfilled) t.backfilled = t.total;
                part.days[td.day - start] += t;
                if (config.per_user) part.users[uc.user] += t;
            }
        }
    };

    const std::size_t workers = std::max<std::size_t>(1, std::min(config.workers, cases.size()));
    std::vector<Partial> parts(workers);
    if (workers == 1) {
        run(0, 1, parts[0]);
    } else {
        std::vector<std::thread> threads;
        for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w, workers, std::ref(parts[w]));
        for (auto& t : threads) t.join();
    }
    for (const auto& part : parts) {
        for (const auto& [d, t] : part.days) report.days[d] += t;
        for (const auto& [u, t] : part.users) report.users[u] += t;
    }
    for (auto h : config.horizons) {
        Tally& agg = report.horizons[h];
        for (auto it = report.days.begin(); it != report.days.end() && it->first < h; ++it) agg += it->second;
    }
    for (const auto& [d, t] : report.days) report.overall += t;
    return report;
}

void write_report_tsv(const EvalReport& report, std::ostream& out) {
    out << "day\taccuracy\thits\ttotal\n";
    for (const auto& [d, t] : report.days)
        out << d + 1 << '\t' << detail::format_shortest(t.accuracy()) << '\t' << t.hits << '\t' << t.total << '\n';
}

std::string report_json(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["recommender"] = report.recommender;
    j["start_day"] = report.start_day;
    j["hits"] = report.overall.hits;
    j["total"] = report.overall.total;
    j["accuracy"] = report.overall.accuracy();
    j["backfill_fraction"] = report.backfill_fraction();
    auto& horizons = j["horizons"] = nlohmann::ordered_json::array();
    for (const auto& [h, t] : report.horizons)
        horizons.push_back({{"days", h}, {"accuracy", t.accuracy()}, {"hits", t.hits}, {"total", t.total}});
    auto& days = j["days"] = nlohmann::ordered_json::array();
    for (const auto& [d, t] : report.days)
        days.push_back({{"day", d + 1}, {"accuracy", t.accuracy()}, {"hits", t.hits}, {"total", t.total},
                        {"backfilled", t.backfilled}});
    return j.dump(2);
}

std::string_view to_string(SweepParameter p) {
    switch (p) {
        case SweepParameter::alpha: return "alpha";
        case SweepParameter::lookback: return "lookback";
        case SweepParameter::refresh: return "refresh";
    }
    return "?";
}

SweepParameter parse_sweep_parameter(std::string_view s) {
    if (s == "alpha") return SweepParameter::alpha;
    if (s == "lookback") return SweepParameter::lookback;
    if (s == "refresh") return SweepParameter::refresh;
    throw Error("unknown sweep parameter '" + std::string(s) + "' (expected alpha, lookback or refresh)");
}

std::vector<SweepPoint> sweep(const RecommenderFactory& factory, SweepParameter parameter,
                              const std::vector<double>& grid, const Corpus& train, const Corpus& test,
                              const CohortMap& cohorts, const EvalConfig& config) {
    std::vector<SweepPoint> out;
    for (double value : grid) {
        EvalConfig c = config;
        auto as_days = [&] {
            if (value != static_cast<double>(static_cast<std::int64_t>(value)))
                throw Error("day-valued sweep parameters must be integers");
            return static_cast<std::int64_t>(value);
        };
        switch (parameter) {
            case SweepParameter::alpha: c.alpha = value; break;
            case SweepParameter::lookback: c.lookback_days = as_days(); break;
            case SweepParameter::refresh: c.refresh_days = as_days(); break;
        }
        c.validate();
        auto recommender = factory(c);
        out.push_back({value, evaluate(*recommender, train, test, cohorts, c)});
    }
    return out;
}

void write_sweep_tsv(SweepParameter parameter, const std::vector<SweepPoint>& points, const EvalConfig& config,
                     std::ostream& out) {
    out << "parameter\tvalue";
    for (auto h : config.horizons) out << "\th" << h;
    out << '\n';
    for (const auto& pt : points) {
        out << to_string(parameter) << '\t' << detail::format_shortest(pt.value);
        for (auto h : config.horizons) {
            auto it = pt.report.horizons.find(h);
            out << '\t' << detail::format_shortest(it == pt.report.horizons.end() ? 0.0 : it->second.accuracy());
        }
        out << '\n';
    }
}

}  // namespace prodrec
