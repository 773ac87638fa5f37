#include "prodrec/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "prodrec/detail/random.hpp"
#include "prodrec/detail/text.hpp"

namespace prodrec {

std::uint32_t GroundTruth::group_of(const std::string& product_token) const {
    auto it = std::find(product_tokens.begin(), product_tokens.end(), product_token);
    if (it == product_tokens.end()) throw UnknownKeyError("unknown product '" + product_token + "'");
    return product_group[static_cast<std::size_t>(it - product_tokens.begin())];
}

namespace {

std::vector<CohortSpec> default_cohort_mix() {
    return {
        {{Gender::female, AgeBucket::age_30_34, "CA"}, 1.0},
        {{Gender::male, AgeBucket::age_21_24, "NY"}, 1.0},
        {{Gender::female, AgeBucket::age_18_20, "TX"}, 1.0},
        {{Gender::male, AgeBucket::age_40_44, "WA"}, 1.0},
    };
}

std::size_t draw_weighted(const std::vector<double>& weights, double total, detail::Rng& rng) {
    double x = detail::uniform01(rng) * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        x -= weights[i];
        if (x < 0) return i;
    }
    // rounding: fall back to the last positive weight
    for (std::size_t i = weights.size(); i-- > 0;)
        if (weights[i] > 0) return i;
    return 0;
}

std::int64_t draw_range(const IntRange& r, detail::Rng& rng) {
    return r.lo + static_cast<std::int64_t>(detail::uniform_below(rng, static_cast<std::uint64_t>(r.hi - r.lo + 1)));
}

std::string numbered(char prefix, std::size_t i, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%c%0*zu", prefix, width, i);
    return buf;
}

}  // namespace

void validate(const GenConfig& c) {
    if (c.num_products == 0 || c.num_groups == 0 || c.num_users == 0)
        throw Error("num_users, num_products and num_groups must be positive");
    if (c.num_groups > c.num_products) throw Error("num_groups exceeds num_products");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(c.within_group_prob) || !prob(c.shopper_fraction)) throw Error("probabilities must lie in [0, 1]");
    if (c.receipts_per_user.lo < 1 || c.receipts_per_user.lo > c.receipts_per_user.hi)
        throw Error("receipts_per_user must be a non-empty range of positive counts");
    if (c.items_per_receipt.lo < 1 || c.items_per_receipt.lo > c.items_per_receipt.hi)
        throw Error("items_per_receipt must be a non-empty range of positive counts");
    if (c.gap_days.lo < 0 || c.gap_days.lo > c.gap_days.hi) throw Error("gap_days must be a non-empty range");
    if (!c.group_transition.empty()) {
        if (c.group_transition.size() != c.num_groups) throw Error("group_transition must be G x G");
        for (const auto& row : c.group_transition) {
            if (row.size() != c.num_groups) throw Error("group_transition must be G x G");
            double sum = 0;
            for (double v : row) {
                if (!prob(v)) throw Error("group_transition entries must lie in [0, 1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > 1e-12) throw Error("group_transition rows must sum to 1");
        }
    }
    if (!c.group_prices.empty()) {
        if (c.group_prices.size() != c.num_groups) throw Error("group_prices needs one range per group");
        for (const auto& r : c.group_prices)
            if (r.lo < 0 || r.lo > r.hi) throw Error("price ranges must be non-empty and non-negative");
    }
    for (const auto& spec : c.cohort_mix)
        if (spec.weight < 0) throw Error("cohort weights must be non-negative");
    if (c.cohort_bias <= 0 || c.trend_boost <= 0) throw Error("multiplicative weights must be positive");
    if (c.trend_period_days < 0) throw Error("trend_period_days must be non-negative");
}

GeneratedData generate(const GenConfig& config) {
    validate(config);
    const std::size_t P = config.num_products;
    const std::size_t G = config.num_groups;
    detail::Rng rng(mix64(config.seed, 0x6461746167656eULL));

    GeneratedData out;
    auto& truth = out.truth;

    // products and groups
    std::vector<std::size_t> perm(P);
    std::iota(perm.begin(), perm.end(), 0);
    detail::shuffle(std::span<std::size_t>(perm), rng);
    truth.product_group.assign(P, 0);
    std::vector<std::vector<std::size_t>> members(G);
    for (std::size_t i = 0; i < P; ++i) {
        auto g = static_cast<std::uint32_t>(i % G);
        truth.product_group[perm[i]] = g;
        members[g].push_back(perm[i]);
    }
    for (auto& m : members) std::sort(m.begin(), m.end());
    const int width = static_cast<int>(std::to_string(P).size());
    for (std::size_t p = 0; p < P; ++p) truth.product_tokens.push_back(numbered('p', p, width));

    std::vector<double> price(P);
    for (std::size_t p = 0; p < P; ++p) {
        PriceRange range = config.group_prices.empty() ? PriceRange{} : config.group_prices[truth.product_group[p]];
        double v = range.lo + detail::uniform01(rng) * (range.hi - range.lo);
        price[p] = std::round(v * 100.0) / 100.0;
    }

    // base popularity: Zipf inside each group over a random rank order
    std::vector<double> base(P, 1.0);
    if (config.popularity_skew > 0) {
        for (auto m : members) {
            detail::shuffle(std::span<std::size_t>(m), rng);
            for (std::size_t r = 0; r < m.size(); ++r)
                base[m[r]] = 1.0 / std::pow(static_cast<double>(r + 1), config.popularity_skew);
        }
    }

    // group transitions
    std::vector<std::vector<double>> kernel = config.group_transition;
    if (kernel.empty()) {
        kernel.assign(G, std::vector<double>(G, 0.0));
        for (std::size_t i = 0; i < G; ++i) {
            if (G == 1) {
                kernel[i][i] = 1.0;
                continue;
            }
            double sum = 0;
            for (std::size_t j = 0; j < G; ++j) {
                if (j == i) continue;
                double u = detail::uniform01(rng);
                kernel[i][j] = u * u * u * u + 1e-3;
                sum += kernel[i][j];
            }
            for (auto& v : kernel[i]) v /= sum;
        }
    }
    truth.group_transition.assign(G, std::vector<double>(G, 0.0));
    for (std::size_t i = 0; i < G; ++i)
        for (std::size_t j = 0; j < G; ++j)
            truth.group_transition[i][j] = (1.0 - config.within_group_prob) * kernel[i][j] + (i == j ? config.within_group_prob : 0.0);

    // cohorts and their favourite products
    auto mix = config.cohort_mix.empty() ? default_cohort_mix() : config.cohort_mix;
    std::vector<double> mix_weights;
    for (const auto& spec : mix) mix_weights.push_back(spec.weight);
    double mix_total = std::accumulate(mix_weights.begin(), mix_weights.end(), 0.0);
    if (mix_total <= 0) throw Error("cohort_mix has no positive weight");

    std::vector<std::vector<double>> cohort_weight(mix.size(), base);
    for (std::size_t c = 0; c < mix.size(); ++c) {
        std::vector<std::size_t> all(P);
        std::iota(all.begin(), all.end(), 0);
        detail::shuffle(std::span<std::size_t>(all), rng);
        auto favourites = std::min(config.cohort_favorites, P);
        for (std::size_t f = 0; f < favourites; ++f)
            cohort_weight[c][all[f]] *= (f == 0 ? 2.0 : 1.0) * config.cohort_bias;
    }

    // expected visit frequency over a typical walk, for cohort top products
    {
        double mean_receipts = 0.5 * static_cast<double>(config.receipts_per_user.lo + config.receipts_per_user.hi);
        auto steps = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mean_receipts)));
        std::vector<double> dist(G, 1.0 / static_cast<double>(G));
        std::vector<double> visit(G, 0.0);
        for (std::size_t t = 0; t < steps; ++t) {
            std::vector<double> next(G, 0.0);
            for (std::size_t i = 0; i < G; ++i) {
                visit[i] += dist[i];
                for (std::size_t j = 0; j < G; ++j) next[j] += dist[i] * truth.group_transition[i][j];
            }
            dist = std::move(next);
        }
        for (std::size_t c = 0; c < mix.size(); ++c) {
            std::vector<double> group_total(G, 0.0);
            for (std::size_t p = 0; p < P; ++p) group_total[truth.product_group[p]] += cohort_weight[c][p];
            std::size_t best = 0;
            double best_share = -1;
            for (std::size_t p = 0; p < P; ++p) {
                auto g = truth.product_group[p];
                double share = visit[g] * cohort_weight[c][p] / group_total[g];
                if (share > best_share) {
                    best_share = share;
                    best = p;
                }
            }
            truth.cohort_top_product[mix[c].key] = truth.product_tokens[best];
        }
    }

    // drifting trend sets, one per period
    std::unordered_map<std::int64_t, std::vector<char>> trend_cache;
    auto trend_set = [&](std::int64_t period) -> const std::vector<char>& {
        auto it = trend_cache.find(period);
        if (it != trend_cache.end()) return it->second;
        detail::Rng trng(mix64(config.seed, 0x7472656e64ULL, static_cast<std::uint64_t>(period)));
        std::vector<std::size_t> all(P);
        std::iota(all.begin(), all.end(), 0);
        detail::shuffle(std::span<std::size_t>(all), trng);
        std::vector<char> flags(P, 0);
        for (std::size_t i = 0; i < std::min(config.trend_size, P); ++i) flags[all[i]] = 1;
        return trend_cache.emplace(period, std::move(flags)).first->second;
    };

    const Day first_day = day_of(config.start_time);
    const int user_width = static_cast<int>(std::to_string(config.num_users).size());
    std::ostringstream receipts;
    std::ostringstream cohorts;
    std::vector<double> weights;
    for (std::size_t u = 0; u < config.num_users; ++u) {
        auto user = numbered('u', u, user_width);
        auto c = draw_weighted(mix_weights, mix_total, rng);
        const auto& key = mix[c].key;
        auto& tally = truth.cohort_tally[key];
        ++tally.users;
        cohorts << user << '\t' << to_string(key.gender) << '\t' << to_string(key.age) << '\t'
                << (key.state.empty() ? std::string("-") : key.state) << '\n';
        if (detail::uniform01(rng) >= config.shopper_fraction) continue;
        ++tally.shoppers;

        auto n_receipts = draw_range(config.receipts_per_user, rng);
        Day day = first_day + static_cast<Day>(detail::uniform_below(rng, static_cast<std::uint64_t>(config.gap_days.hi) + 1));
        auto group = static_cast<std::size_t>(detail::uniform_below(rng, G));
        auto& groups_seen = truth.receipt_groups[user];
        for (std::int64_t m = 0; m < n_receipts; ++m) {
            groups_seen.push_back(static_cast<std::uint32_t>(group));
            const auto& candidates = members[group];
            weights.assign(candidates.size(), 0.0);
            const std::vector<char>* trend = nullptr;
            if (config.trend_period_days > 0) trend = &trend_set((day - first_day) / config.trend_period_days);
            double total = 0;
            for (std::size_t i = 0; i < candidates.size(); ++i) {
                double w = cohort_weight[c][candidates[i]];
                if (trend && (*trend)[candidates[i]]) w *= config.trend_boost;
                weights[i] = w;
                total += w;
            }
            auto n_items = draw_range(config.items_per_receipt, rng);
            Timestamp ts = day_start(day) + static_cast<Timestamp>(detail::uniform_below(rng, kSecondsPerDay));
            std::string products;
            std::string prices;
            for (std::int64_t k = 0; k < n_items; ++k) {
                auto p = candidates[draw_weighted(weights, total, rng)];
                if (k) {
                    products += ',';
                    prices += ',';
                }
                products += truth.product_tokens[p];
                prices += detail::format_shortest(price[p]);
                ++tally.purchases;
                tally.spend += price[p];
            }
            receipts << user << '\t' << ts << '\t' << products << '\t' << prices << '\n';

            if (detail::uniform01(rng) >= config.within_group_prob)
                group = draw_weighted(kernel[group], 1.0, rng);
            day += draw_range(config.gap_days, rng);
        }
    }
    out.receipts = receipts.str();
    out.cohorts = cohorts.str();
    return out;
}

void write_groups(const GroundTruth& truth, std::ostream& out) {
    for (std::size_t p = 0; p < truth.product_tokens.size(); ++p)
        out << truth.product_tokens[p] << '\t' << truth.product_group[p] << '\n';
}

void write_transition_matrix(const std::vector<std::vector<double>>& matrix, std::ostream& out) {
    out << matrix.size() << '\n';
    for (const auto& row : matrix) {
        for (std::size_t j = 0; j < row.size(); ++j) out << (j ? "\t" : "") << detail::format_shortest(row[j]);
        out << '\n';
    }
}

std::vector<std::vector<double>> read_transition_matrix(std::istream& in) {
    std::string line;
    std::size_t n = 0;
    if (!std::getline(in, line) || !detail::parse_int(line, n)) throw ParseError(1, "expected matrix size");
    std::vector<std::vector<double>> m;
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::getline(in, line)) throw ParseError(i + 2, "truncated matrix");
        auto fields = detail::split(line, '\t');
        if (fields.size() != n) throw ParseError(i + 2, "expected " + std::to_string(n) + " columns");
        std::vector<double> row(n);
        for (std::size_t j = 0; j < n; ++j)
            if (!detail::parse_double(fields[j], row[j])) throw ParseError(i + 2, "invalid number");
        m.push_back(std::move(row));
    }
    return m;
}

}  // namespace prodrec
