#include "prodrec/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "prodrec/detail/random.hpp"
#include "prodrec/detail/text.hpp"

namespace prodrec {

TokenTable::TokenTable(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    index_.reserve(tokens_.size());
    for (std::uint32_t i = 0; i < tokens_.size(); ++i) {
        if (!index_.emplace(tokens_[i], i).second) throw Error("duplicate token '" + tokens_[i] + "'");
    }
}

std::uint32_t TokenTable::intern(std::string_view token) {
    auto it = index_.find(std::string(token));
    if (it != index_.end()) return it->second;
    auto id = static_cast<std::uint32_t>(tokens_.size());
    tokens_.emplace_back(token);
    index_.emplace(tokens_.back(), id);
    return id;
}

std::optional<std::uint32_t> TokenTable::find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::uint32_t TokenTable::at(std::string_view token) const {
    if (auto id = find(token)) return *id;
    throw UnknownKeyError("unknown token '" + std::string(token) + "'");
}

const UserLog* Corpus::find(UserId user) const {
    auto it = std::lower_bound(logs.begin(), logs.end(), user,
                               [](const UserLog& log, UserId u) { return log.user < u; });
    if (it == logs.end() || it->user != user) return nullptr;
    return &*it;
}

std::size_t Corpus::num_receipts() const {
    std::size_t n = 0;
    for (const auto& log : logs) n += log.receipts.size();
    return n;
}

std::size_t Corpus::num_purchases() const {
    std::size_t n = 0;
    for (const auto& log : logs)
        for (const auto& r : log.receipts) n += r.products.size();
    return n;
}

// ---------------------------------------------------------------------------
// Cohorts

namespace {

constexpr std::array<std::string_view, 9> kAgeNames = {"-",     "18-20", "21-24", "25-29", "30-34",
                                                       "35-39", "40-44", "45-49", "50+"};

}  // namespace

std::string_view to_string(Gender g) {
    switch (g) {
        case Gender::male: return "male";
        case Gender::female: return "female";
        default: return "-";
    }
}

std::string_view to_string(AgeBucket a) { return kAgeNames.at(static_cast<std::size_t>(a)); }

Gender parse_gender(std::string_view s) {
    if (s == "-") return Gender::unknown;
    if (s == "male" || s == "M" || s == "m") return Gender::male;
    if (s == "female" || s == "F" || s == "f") return Gender::female;
    throw Error("invalid gender '" + std::string(s) + "'");
}

AgeBucket parse_age_bucket(std::string_view s) {
    for (std::size_t i = 0; i < kAgeNames.size(); ++i)
        if (kAgeNames[i] == s) return static_cast<AgeBucket>(i);
    throw Error("invalid age bucket '" + std::string(s) + "'");
}

namespace {

std::string parse_state(std::string_view s) {
    if (s == "-") return {};
    if (s.size() != 2 || !std::isalpha(static_cast<unsigned char>(s[0])) ||
        !std::isalpha(static_cast<unsigned char>(s[1])))
        throw Error("invalid state '" + std::string(s) + "'");
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

std::string to_string(const CohortKey& key) {
    std::string out(to_string(key.gender));
    out += '/';
    out += to_string(key.age);
    out += '/';
    out += key.state.empty() ? std::string("-") : key.state;
    return out;
}

CohortKey parse_cohort(std::string_view s) {
    auto parts = detail::split(s, '/');
    if (parts.size() != 3) throw Error("cohort must be gender/age/state: '" + std::string(s) + "'");
    return CohortKey{parse_gender(parts[0]), parse_age_bucket(parts[1]), parse_state(parts[2])};
}

const CohortKey& cohort_of(const CohortMap& cohorts, UserId user) {
    static const CohortKey unknown{};
    auto it = cohorts.find(user);
    return it == cohorts.end() ? unknown : it->second;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct PendingReceipt {
    Timestamp timestamp;
    std::size_t order;
    std::vector<std::uint32_t> products;  // provisional ids
    std::vector<double> prices;
};

double median_of(std::vector<double> values) {
    if (values.empty()) return 0.0;
    auto mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    double hi = values[mid];
    if (values.size() % 2 == 1) return hi;
    double lo = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

// Orders ids by descending count, ties by token.
std::vector<std::uint32_t> canonical_order(const std::vector<std::string>& tokens,
                                           const std::vector<std::int64_t>& counts,
                                           const std::vector<std::uint32_t>& ids) {
    std::vector<std::uint32_t> order = ids;
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        if (counts[a] != counts[b]) return counts[a] > counts[b];
        return tokens[a] < tokens[b];
    });
    return order;
}

}  // namespace

ParsedLogs parse_logs(std::istream& receipts, std::istream* cohorts) {
    TokenTable users;
    TokenTable raw_products;
    std::vector<std::vector<PendingReceipt>> pending;
    std::vector<std::vector<double>> observed_prices;

    std::string line;
    std::size_t line_no = 0;
    std::size_t order = 0;
    while (std::getline(receipts, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split(line, '\t');
        if (fields.size() != 4) throw ParseError(line_no, "expected 4 tab-separated fields");
        if (fields[0].empty()) throw ParseError(line_no, "empty user token");

        PendingReceipt r;
        r.order = order++;
        if (!detail::parse_int(fields[1], r.timestamp)) throw ParseError(line_no, "timestamp is not an integer");
        if (fields[2].empty()) throw ParseError(line_no, "empty product list");
        auto product_tokens = detail::split(fields[2], ',');
        auto price_tokens = detail::split(fields[3], ',');
        if (price_tokens.size() != product_tokens.size())
            throw ParseError(line_no, "price count does not match product count");
        for (std::size_t i = 0; i < product_tokens.size(); ++i) {
            if (product_tokens[i].empty()) throw ParseError(line_no, "empty product token");
            double price = 0;
            if (!detail::parse_double(price_tokens[i], price) || !std::isfinite(price) || price < 0)
                throw ParseError(line_no, "invalid price '" + std::string(price_tokens[i]) + "'");
            auto pid = raw_products.intern(product_tokens[i]);
            if (pid == observed_prices.size()) observed_prices.emplace_back();
            observed_prices[pid].push_back(price);
            r.products.push_back(pid);
            r.prices.push_back(price);
        }
        auto uid = users.intern(fields[0]);
        if (uid == pending.size()) pending.emplace_back();
        pending[uid].push_back(std::move(r));
    }

    // canonical product ids: descending count, ties by token
    std::vector<std::int64_t> counts(raw_products.size());
    for (std::size_t p = 0; p < counts.size(); ++p) counts[p] = static_cast<std::int64_t>(observed_prices[p].size());
    std::vector<std::uint32_t> all(raw_products.size());
    std::iota(all.begin(), all.end(), 0u);
    auto order_ids = canonical_order(raw_products.tokens(), counts, all);
    std::vector<ProductId> remap(raw_products.size());
    std::vector<std::string> tokens;
    Vocabulary vocab;
    for (std::uint32_t rank = 0; rank < order_ids.size(); ++rank) {
        auto old = order_ids[rank];
        remap[old] = rank;
        tokens.push_back(raw_products.token(old));
        vocab.counts.push_back(counts[old]);
        vocab.median_prices.push_back(median_of(observed_prices[old]));
    }
    vocab.products = TokenTable(std::move(tokens));

    ParsedLogs out;
    out.corpus.vocab = std::move(vocab);
    for (UserId u = 0; u < pending.size(); ++u) {
        auto& rs = pending[u];
        std::stable_sort(rs.begin(), rs.end(),
                         [](const PendingReceipt& a, const PendingReceipt& b) { return a.timestamp < b.timestamp; });
        UserLog log{u, {}};
        for (auto& r : rs) {
            Receipt receipt{r.timestamp, {}, std::move(r.prices)};
            for (auto p : r.products) receipt.products.push_back(remap[p]);
            log.receipts.push_back(std::move(receipt));
        }
        out.corpus.logs.push_back(std::move(log));
    }

    if (cohorts) {
        line_no = 0;
        while (std::getline(*cohorts, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto fields = detail::split(line, '\t');
            if (fields.size() != 4) throw ParseError(line_no, "cohort line needs 4 tab-separated fields");
            if (fields[0].empty()) throw ParseError(line_no, "empty user token");
            CohortKey key;
            try {
                key = CohortKey{parse_gender(fields[1]), parse_age_bucket(fields[2]), parse_state(fields[3])};
            } catch (const Error& e) {
                throw ParseError(line_no, e.what());
            }
            out.cohorts[users.intern(fields[0])] = std::move(key);
        }
    }
    out.corpus.users = std::move(users);
    return out;
}

ParsedLogs parse_logs(std::string_view receipts_text, std::string_view cohorts_text) {
    std::istringstream receipts{std::string(receipts_text)};
    if (cohorts_text.empty()) return parse_logs(receipts, nullptr);
    std::istringstream cohorts{std::string(cohorts_text)};
    return parse_logs(receipts, &cohorts);
}

void write_logs(const Corpus& corpus, std::ostream& out) {
    for (const auto& log : corpus.logs) {
        const auto& user = corpus.users.token(log.user);
        for (const auto& r : log.receipts) {
            out << user << '\t' << r.timestamp << '\t';
            for (std::size_t i = 0; i < r.products.size(); ++i) {
                if (i) out << ',';
                out << corpus.vocab.products.token(r.products[i]);
            }
            out << '\t';
            for (std::size_t i = 0; i < r.prices.size(); ++i) {
                if (i) out << ',';
                out << detail::format_shortest(r.prices[i]);
            }
            out << '\n';
        }
    }
}

void write_cohorts(const Corpus& corpus, const CohortMap& cohorts, std::ostream& out) {
    for (UserId u = 0; u < corpus.users.size(); ++u) {
        auto it = cohorts.find(u);
        if (it == cohorts.end()) continue;
        const auto& key = it->second;
        out << corpus.users.token(u) << '\t' << to_string(key.gender) << '\t' << to_string(key.age) << '\t'
            << (key.state.empty() ? std::string("-") : key.state) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary build_vocabulary(const Corpus& raw, std::int64_t min_count, double min_price) {
    const auto n = raw.vocab.size();
    std::vector<std::int64_t> counts(n, 0);
    std::vector<std::vector<double>> prices(n);
    for (const auto& log : raw.logs)
        for (const auto& r : log.receipts)
            for (std::size_t i = 0; i < r.products.size(); ++i) {
                ++counts[r.products[i]];
                prices[r.products[i]].push_back(r.prices[i]);
            }

    std::vector<double> medians(n);
    std::vector<std::uint32_t> kept;
    for (std::uint32_t p = 0; p < n; ++p) {
        medians[p] = median_of(prices[p]);
        if (counts[p] > 0 && counts[p] >= min_count && medians[p] >= min_price) kept.push_back(p);
    }
    if (kept.empty()) throw Error("vocabulary is empty after filtering");

    Vocabulary vocab;
    vocab.min_count = min_count;
    vocab.min_price = min_price;
    std::vector<std::string> tokens;
    for (auto p : canonical_order(raw.vocab.products.tokens(), counts, kept)) {
        tokens.push_back(raw.vocab.products.token(p));
        vocab.counts.push_back(counts[p]);
        vocab.median_prices.push_back(medians[p]);
    }
    vocab.products = TokenTable(std::move(tokens));
    return vocab;
}

Corpus apply_vocabulary(const Corpus& raw, const Vocabulary& vocab) {
    std::vector<std::optional<ProductId>> remap(raw.vocab.size());
    for (ProductId p = 0; p < raw.vocab.size(); ++p) remap[p] = vocab.products.find(raw.vocab.products.token(p));

    Corpus out;
    out.vocab = vocab;
    out.users = raw.users;
    out.dropped = raw.dropped;
    for (const auto& log : raw.logs) {
        UserLog mapped{log.user, {}};
        for (const auto& r : log.receipts) {
            Receipt kept{r.timestamp, {}, {}};
            for (std::size_t i = 0; i < r.products.size(); ++i) {
                if (auto id = remap[r.products[i]]) {
                    kept.products.push_back(*id);
                    kept.prices.push_back(r.prices[i]);
                } else {
                    out.dropped.push_back({log.user, r.timestamp, raw.vocab.products.token(r.products[i])});
                }
            }
            if (!kept.products.empty()) mapped.receipts.push_back(std::move(kept));
        }
        if (!mapped.receipts.empty()) out.logs.push_back(std::move(mapped));
    }
    return out;
}

void write_vocabulary(const Vocabulary& vocab, std::ostream& out) {
    for (ProductId p = 0; p < vocab.size(); ++p)
        out << vocab.products.token(p) << '\t' << p << '\t' << vocab.counts[p] << '\n';
}

Vocabulary read_vocabulary(std::istream& in) {
    std::vector<std::string> tokens;
    Vocabulary vocab;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split(line, '\t');
        std::int64_t id = 0;
        std::int64_t count = 0;
        if (fields.size() != 3 || !detail::parse_int(fields[1], id) || !detail::parse_int(fields[2], count))
            throw ParseError(line_no, "expected 'token TAB id TAB count'");
        if (id != static_cast<std::int64_t>(tokens.size())) throw ParseError(line_no, "ids must be contiguous and ascending");
        tokens.emplace_back(fields[0]);
        vocab.counts.push_back(count);
    }
    vocab.median_prices.assign(tokens.size(), 0.0);
    vocab.products = TokenTable(std::move(tokens));
    return vocab;
}

// ---------------------------------------------------------------------------
// Time split and merge

TimeSplit split_by_time(const Corpus& corpus, Timestamp cutoff) {
    TimeSplit split;
    for (auto* half : {&split.train, &split.test}) {
        half->vocab = corpus.vocab;
        half->users = corpus.users;
    }
    for (const auto& log : corpus.logs) {
        UserLog train{log.user, {}};
        UserLog test{log.user, {}};
        for (const auto& r : log.receipts) (r.timestamp < cutoff ? train : test).receipts.push_back(r);
        if (!train.receipts.empty()) split.train.logs.push_back(std::move(train));
        if (!test.receipts.empty()) split.test.logs.push_back(std::move(test));
    }
    for (const auto& d : corpus.dropped) (d.timestamp < cutoff ? split.train : split.test).dropped.push_back(d);
    return split;
}

TimeSplit split_with_train_vocabulary(const Corpus& raw, Timestamp cutoff, std::int64_t min_count, double min_price) {
    auto halves = split_by_time(raw, cutoff);
    auto vocab = build_vocabulary(halves.train, min_count, min_price);
    return {apply_vocabulary(halves.train, vocab), apply_vocabulary(halves.test, vocab)};
}

Corpus merge(const Corpus& a, const Corpus& b) {
    if (!(a.vocab.products == b.vocab.products) || !(a.users == b.users))
        throw Error("merge requires identical vocabulary and user table");
    Corpus out;
    out.vocab = a.vocab;
    out.users = a.users;
    out.dropped = a.dropped;
    out.dropped.insert(out.dropped.end(), b.dropped.begin(), b.dropped.end());
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.logs.size() || j < b.logs.size()) {
        if (j == b.logs.size() || (i < a.logs.size() && a.logs[i].user < b.logs[j].user)) {
            out.logs.push_back(a.logs[i++]);
        } else if (i == a.logs.size() || b.logs[j].user < a.logs[i].user) {
            out.logs.push_back(b.logs[j++]);
        } else {
            UserLog log = a.logs[i++];
            const auto& other = b.logs[j++].receipts;
            log.receipts.insert(log.receipts.end(), other.begin(), other.end());
            std::stable_sort(log.receipts.begin(), log.receipts.end(),
                             [](const Receipt& x, const Receipt& y) { return x.timestamp < y.timestamp; });
            out.logs.push_back(std::move(log));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cohort statistics

std::map<CohortKey, CohortStats> cohort_stats(const Corpus& corpus, const CohortMap& cohorts,
                                              const std::map<CohortKey, std::int64_t>& online_users) {
    std::map<CohortKey, CohortStats> stats;
    for (const auto& [key, n] : online_users) stats[key].online_users = n;

    for (const auto& log : corpus.logs) {
        const auto& key = cohort_of(cohorts, log.user);
        auto it = stats.find(key);
        if (it == stats.end() || !online_users.count(key))
            throw Error("no online-user count for cohort " + to_string(key));
        auto& s = it->second;
        ++s.shoppers;
        for (const auto& r : log.receipts) {
            s.purchases += static_cast<std::int64_t>(r.products.size());
            for (double price : r.prices) s.spend += price;
        }
    }
    for (auto& [key, s] : stats) {
        if (s.shoppers == 0) continue;
        s.pct_shoppers = s.online_users > 0 ? static_cast<double>(s.shoppers) / static_cast<double>(s.online_users) : 0.0;
        s.avg_purchases = static_cast<double>(s.purchases) / static_cast<double>(s.shoppers);
        s.avg_spend = s.spend / static_cast<double>(s.shoppers);
        s.avg_item_price = s.purchases > 0 ? s.spend / static_cast<double>(s.purchases) : 0.0;
    }
    return stats;
}

// ---------------------------------------------------------------------------
// Flattening

std::vector<FlatPurchase> flatten(const UserLog& log, std::uint64_t seed) {
    std::vector<FlatPurchase> seq;
    std::vector<ProductId> items;
    for (std::uint32_t m = 0; m < log.receipts.size(); ++m) {
        const auto& r = log.receipts[m];
        items = r.products;
        detail::Rng rng(mix64(seed, log.user, m));
        detail::shuffle(std::span<ProductId>(items), rng);
        for (auto p : items) seq.push_back({p, r.timestamp, m});
    }
    return seq;
}

}  // namespace prodrec
