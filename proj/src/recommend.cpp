#include "prodrec/recommend.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "prodrec/detail/random.hpp"
#include "prodrec/detail/text.hpp"

namespace prodrec {

namespace {

void keep_top(std::vector<ScoredProduct>& items, std::size_t k) {
    if (items.size() > k) {
        std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(k), items.end(), ranks_before);
        items.resize(k);
    } else {
        std::sort(items.begin(), items.end(), ranks_before);
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Cosine retrieval

CosineIndex::CosineIndex(const Matrix<float>& vectors) : unit_(vectors.rows(), vectors.cols()), zero_(vectors.rows(), 0) {
    for (std::size_t i = 0; i < vectors.rows(); ++i) {
        auto v = vectors.row(i);
        double norm = std::sqrt(dot(v, v));
        if (!(norm > 0) || !std::isfinite(norm)) {
            zero_[i] = 1;
            continue;
        }
        auto u = unit_.row(i);
        for (std::size_t d = 0; d < v.size(); ++d) u[d] = v[d] / norm;
    }
}

std::vector<ScoredProduct> CosineIndex::nearest(std::span<const double> query, std::size_t k,
                                                std::optional<ProductId> exclude,
                                                std::span<const ProductId> candidates) const {
    std::vector<ScoredProduct> scored;
    auto consider = [&](ProductId p) {
        if (exclude && *exclude == p) return;
        scored.push_back({p, dot(query, unit_.row(p)), {}, 0});
    };
    if (candidates.empty()) {
        scored.reserve(size());
        for (ProductId p = 0; p < size(); ++p) consider(p);
    } else {
        for (auto p : candidates) consider(p);
    }
    keep_top(scored, k);
    return scored;
}

std::vector<double> unit_vector(std::span<const float> v) {
    double norm = std::sqrt(dot(v, v));
    if (!(norm > 0) || !std::isfinite(norm)) throw Error("cosine similarity is undefined for a zero or non-finite vector");
    std::vector<double> u(v.size());
    for (std::size_t d = 0; d < v.size(); ++d) u[d] = v[d] / norm;
    return u;
}

std::vector<ScoredProduct> topk_similar(const CosineIndex& index, ProductId query, std::size_t k) {
    if (query >= index.size()) throw UnknownKeyError("product " + std::to_string(query) + " is not in the vocabulary");
    if (index.is_zero(query)) throw Error("query product has a zero vector");
    auto items = index.nearest(index.unit(query), k, query);
    for (auto& item : items) item.source = Source::product(query);
    return items;
}

std::vector<ScoredProduct> topk_similar(const EmbeddingModel& model, ProductId query, std::size_t k) {
    return topk_similar(CosineIndex(model), query, k);
}

// ---------------------------------------------------------------------------
// Cluster recommendations

std::vector<std::size_t> allocate_budget(std::span<const double> weights, std::size_t k) {
    const std::size_t n = weights.size();
    if (n == 0) return {};
    if (k < n) throw Error("budget smaller than the number of clusters");
    double total = 0;
    for (double w : weights) total += w;
    if (!(total > 0)) throw Error("allocation weights must have a positive sum");

    std::vector<std::size_t> alloc(n);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t used = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double quota = static_cast<double>(k) * weights[i] / total;
        alloc[i] = static_cast<std::size_t>(std::floor(quota));
        used += alloc[i];
        remainders.push_back({quota - std::floor(quota), i});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; used < k; ++r, ++used) ++alloc[remainders[r % n].second];

    // every selected cluster keeps at least one slot
    for (std::size_t i = 0; i < n; ++i) {
        if (alloc[i] > 0) continue;
        auto donor = static_cast<std::size_t>(std::max_element(alloc.begin(), alloc.end()) - alloc.begin());
        --alloc[donor];
        alloc[i] = 1;
    }
    return alloc;
}

ClusterRecommender::ClusterRecommender(const EmbeddingModel& model, ClusterModel clusters, TransitionMatrix transitions,
                                       std::size_t top_clusters)
    : index_(model), clusters_(std::move(clusters)), transitions_(std::move(transitions)), top_clusters_(top_clusters) {
    if (clusters_.assignment.size() != model.size()) throw Error("cluster assignment does not cover the model vocabulary");
    if (transitions_.size() != clusters_.num_clusters) throw Error("transition matrix size does not match cluster count");
    if (top_clusters_ < 1) throw Error("top_clusters must be >= 1");
    members_ = clusters_.members();
}

ClusterRecommendation ClusterRecommender::recommend(ProductId query, std::size_t k) const {
    if (query >= index_.size()) throw UnknownKeyError("product " + std::to_string(query) + " is not in the vocabulary");
    ClusterRecommendation out;
    if (k == 0) return out;
    const ClusterId home = clusters_.assignment[query];
    if (!transitions_.has_support(home)) {
        out.items = topk_similar(index_, query, k);
        out.fallback = true;
        return out;
    }
    if (index_.is_zero(query)) throw Error("query product has a zero vector");

    std::vector<ClusterId> ranked;
    for (ClusterId c = 0; c < transitions_.size(); ++c)
        if (transitions_.theta(home, c) > 0) ranked.push_back(c);
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](ClusterId a, ClusterId b) { return transitions_.theta(home, a) > transitions_.theta(home, b); });
    ranked.resize(std::min({ranked.size(), top_clusters_, k}));

    std::vector<double> weights;
    for (auto c : ranked) weights.push_back(transitions_.theta(home, c));
    auto alloc = allocate_budget(weights, k);

    std::size_t carry = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        std::size_t want = alloc[i] + carry;
        out.allocation.push_back({ranked[i], alloc[i]});
        const auto& members = members_[ranked[i]];
        if (members.empty()) {
            carry = want;
            continue;
        }
        auto got = index_.nearest(index_.unit(query), want, query, members);
        carry = want - got.size();
        for (auto& item : got) {
            item.source = Source::product(query);
            out.items.push_back(item);
        }
    }
    std::sort(out.items.begin(), out.items.end(), ranks_before);
    return out;
}

ClusterRecommendation cluster_recommend(const EmbeddingModel& model, const ClusterModel& clusters,
                                        const TransitionMatrix& transitions, ProductId query, std::size_t k,
                                        std::size_t top_clusters) {
    return ClusterRecommender(model, clusters, transitions, top_clusters).recommend(query, k);
}

// ---------------------------------------------------------------------------
// User vectors

std::vector<ScoredProduct> user_recommend(const UserEmbeddingModel& model, const CosineIndex& products, UserId user,
                                          std::size_t k) {
    if (!model.has_vector(user)) throw UnknownKeyError("user " + std::to_string(user) + " has no trained vector");
    auto query = unit_vector(model.user_input.row(user));
    auto items = products.nearest(query, k);
    for (auto& item : items) item.source = Source::user(user);
    return items;
}

std::vector<ScoredProduct> user_recommend(const UserEmbeddingModel& model, UserId user, std::size_t k) {
    return user_recommend(model, CosineIndex(model.products), user, k);
}

// ---------------------------------------------------------------------------
// Co-purchase

std::int64_t CoPurchaseModel::count(ProductId a, ProductId b) const {
    if (a >= successors.size()) return 0;
    for (const auto& [p, n] : successors[a])
        if (p == b) return n;
    return 0;
}

CoPurchaseModel copurchase_train(const Corpus& corpus, std::uint64_t seed) {
    std::vector<std::unordered_map<ProductId, std::int64_t>> counts(corpus.vocab.size());
    CoPurchaseModel model;
    for (const auto& log : corpus.logs) {
        auto seq = flatten(log, seed);
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            ++counts[seq[i].product][seq[i + 1].product];
            ++model.total_pairs;
        }
    }
    model.successors.resize(counts.size());
    for (std::size_t a = 0; a < counts.size(); ++a) {
        auto& list = model.successors[a];
        list.assign(counts[a].begin(), counts[a].end());
        std::sort(list.begin(), list.end(), [](const auto& x, const auto& y) {
            return x.second != y.second ? x.second > y.second : x.first < y.first;
        });
    }
    return model;
}

std::vector<ScoredProduct> copurchase_recommend(const CoPurchaseModel& model, ProductId query, std::size_t k) {
    if (query >= model.successors.size())
        throw UnknownKeyError("product " + std::to_string(query) + " is not in the vocabulary");
    std::vector<ScoredProduct> out;
    for (const auto& [p, n] : model.successors[query]) {
        if (out.size() == k) break;
        out.push_back({p, static_cast<double>(n), Source::product(query), 0});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Popularity

namespace {

RankedCounts ranked(const std::unordered_map<ProductId, std::int64_t>& counts, std::size_t limit) {
    RankedCounts out(counts.begin(), counts.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (out.size() > limit) out.resize(limit);
    return out;
}

CohortKey age_gender_key(const CohortKey& c) { return {c.gender, c.age, {}}; }
CohortKey gender_key(const CohortKey& c) { return {c.gender, AgeBucket::unknown, {}}; }

}  // namespace

PopularityModel popular_train(const Corpus& corpus, const CohortMap& cohorts, Day computed_at, std::int64_t lookback_days,
                              std::size_t list_size) {
    if (lookback_days < 1) throw Error("lookback_days must be >= 1");
    PopularityModel model;
    model.computed_at = computed_at;
    model.lookback_days = lookback_days;
    model.list_size = list_size;
    model.num_products = corpus.vocab.size();

    using Counts = std::unordered_map<ProductId, std::int64_t>;
    std::map<CohortKey, Counts> full;
    std::map<CohortKey, Counts> age_gender;
    std::map<CohortKey, Counts> gender;
    Counts global;
    const Day first = computed_at - lookback_days;
    for (const auto& log : corpus.logs) {
        const auto& key = cohort_of(cohorts, log.user);
        for (const auto& r : log.receipts) {
            Day d = day_of(r.timestamp);
            if (d < first || d >= computed_at) continue;
            for (auto p : r.products) {
                ++full[key][p];
                ++age_gender[age_gender_key(key)][p];
                ++gender[gender_key(key)][p];
                ++global[p];
            }
        }
    }
    for (const auto& [k, c] : full) model.by_cohort[k] = ranked(c, list_size);
    for (const auto& [k, c] : age_gender) model.by_age_gender[k] = ranked(c, list_size);
    for (const auto& [k, c] : gender) model.by_gender[k] = ranked(c, list_size);
    model.global = ranked(global, global.size());
    return model;
}

std::vector<ScoredProduct> popular_recommend(const PopularityModel& model, const CohortKey& cohort, std::size_t k,
                                             std::optional<std::uint64_t> shuffle_seed) {
    std::vector<ScoredProduct> out;
    std::vector<char> taken(model.num_products, 0);
    auto take = [&](ProductId p, const CohortKey& level) {
        if (out.size() >= k || p >= taken.size() || taken[p]) return;
        taken[p] = 1;
        out.push_back({p, 0.0, Source::of_cohort(level), 0});
    };
    auto from = [&](const std::map<CohortKey, RankedCounts>& lists, const CohortKey& key) {
        auto it = lists.find(key);
        if (it == lists.end()) return;
        for (const auto& [p, n] : it->second) take(p, key);
    };
    from(model.by_cohort, cohort);
    from(model.by_age_gender, age_gender_key(cohort));
    from(model.by_gender, gender_key(cohort));
    for (const auto& [p, n] : model.global) take(p, CohortKey{});
    for (ProductId p = 0; p < model.num_products && out.size() < k; ++p) take(p, CohortKey{});

    if (shuffle_seed) {
        detail::Rng rng(mix64(*shuffle_seed, 0x73687566ULL));
        detail::shuffle(std::span<ScoredProduct>(out), rng);
    }
    for (std::size_t r = 0; r < out.size(); ++r) out[r].score = 1.0 / static_cast<double>(r + 1);
    return out;
}

void write_popularity(const PopularityModel& model, const TokenTable& products, std::ostream& out) {
    out << model.computed_at << '\t' << model.lookback_days << '\t' << model.list_size << '\t' << model.num_products << '\n';
    auto emit = [&](std::string_view level, const CohortKey& key, const RankedCounts& list) {
        for (const auto& [p, n] : list)
            out << level << '\t' << to_string(key.gender) << '\t' << to_string(key.age) << '\t'
                << (key.state.empty() ? std::string("-") : key.state) << '\t' << products.token(p) << '\t' << n << '\n';
    };
    for (const auto& [k, list] : model.by_cohort) emit("cohort", k, list);
    for (const auto& [k, list] : model.by_age_gender) emit("age_gender", k, list);
    for (const auto& [k, list] : model.by_gender) emit("gender", k, list);
    emit("global", CohortKey{}, model.global);
}

PopularityModel read_popularity(std::istream& in, const TokenTable& products) {
    PopularityModel model;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing popularity header");
    auto header = detail::split(line, '\t');
    if (header.size() != 4 || !detail::parse_int(header[0], model.computed_at) ||
        !detail::parse_int(header[1], model.lookback_days) || !detail::parse_int(header[2], model.list_size) ||
        !detail::parse_int(header[3], model.num_products))
        throw ParseError(1, "popularity header must be 'computed_at TAB lookback TAB list_size TAB num_products'");
    if (model.num_products != products.size()) throw Error("popularity file was built for a different vocabulary");
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::split(line, '\t');
        std::int64_t count = 0;
        if (f.size() != 6 || !detail::parse_int(f[5], count)) throw ParseError(line_no, "malformed popularity row");
        CohortKey key;
        try {
            key = f[3] == "-" ? CohortKey{parse_gender(f[1]), parse_age_bucket(f[2]), {}}
                              : parse_cohort(std::string(f[1]) + "/" + std::string(f[2]) + "/" + std::string(f[3]));
        } catch (const Error& e) {
            throw ParseError(line_no, e.what());
        }
        auto p = products.find(f[4]);
        if (!p) throw ParseError(line_no, "unknown product '" + std::string(f[4]) + "'");
        RankedCounts* list = nullptr;
        if (f[0] == "cohort") list = &model.by_cohort[key];
        else if (f[0] == "age_gender") list = &model.by_age_gender[key];
        else if (f[0] == "gender") list = &model.by_gender[key];
        else if (f[0] == "global") list = &model.global;
        else throw ParseError(line_no, "unknown level '" + std::string(f[0]) + "'");
        list->push_back({*p, count});
    }
    return model;
}

// ---------------------------------------------------------------------------
// Decayed daily consensus

double decay_score(double score, double alpha, std::int64_t age_days) {
    double factor = std::pow(alpha, static_cast<double>(age_days));
    return score >= 0 ? score * factor : score / factor;
}

DailyRecommendation decayed_daily(std::span<const Purchase> history, const ProductRecommender& base, Day day,
                                  const DecayOptions& options) {
    if (history.empty()) throw Error("empty purchase history");
    if (!(options.alpha > 0 && options.alpha <= 1)) throw Error("alpha must lie in (0, 1]");

    // the most recent purchase of a product dominates older ones under decay
    std::unordered_map<ProductId, Timestamp> latest;
    for (const auto& h : history) {
        if (day_of(h.time) >= day) throw Error("history contains a purchase on or after the recommendation day");
        auto [it, inserted] = latest.emplace(h.product, h.time);
        if (!inserted) it->second = std::max(it->second, h.time);
    }
    std::vector<std::pair<ProductId, Timestamp>> sources(latest.begin(), latest.end());
    std::sort(sources.begin(), sources.end());

    std::unordered_map<ProductId, ScoredProduct> best;
    for (const auto& [product, time] : sources) {
        const std::int64_t age = day - day_of(time);
        for (const auto& rec : base(product, options.k)) {
            if (options.exclude_purchased && latest.count(rec.product)) continue;
            ScoredProduct item = rec;
            item.score = decay_score(rec.score, options.alpha, age);
            item.source = Source::product(product);
            item.source_time = time;
            auto [it, inserted] = best.emplace(item.product, item);
            if (!inserted && item.score > it->second.score) it->second = item;
        }
    }
    DailyRecommendation out{day, {}};
    out.items.reserve(best.size());
    for (auto& [p, item] : best) out.items.push_back(item);
    keep_top(out.items, options.k);
    return out;
}

// ---------------------------------------------------------------------------
// Prediction tables

ProductRecommender PredictionTable::as_recommender() const {
    return [this](ProductId query, std::size_t k) {
        std::vector<ScoredProduct> out;
        if (query >= rows.size()) return out;
        const auto& row = rows[query];
        out.assign(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(std::min(k, row.size())));
        return out;
    };
}

PredictionTable build_prediction_table(std::size_t num_products, const ProductRecommender& base, std::size_t fanout) {
    PredictionTable table;
    table.rows.resize(num_products);
    for (ProductId p = 0; p < num_products; ++p) table.rows[p] = base(p, fanout);
    return table;
}

void write_prediction_table(const PredictionTable& table, const TokenTable& products, std::ostream& out) {
    for (ProductId p = 0; p < table.rows.size(); ++p) {
        const auto& row = table.rows[p];
        for (std::size_t r = 0; r < row.size(); ++r)
            out << products.token(p) << '\t' << r << '\t' << products.token(row[r].product) << '\t'
                << detail::format_shortest(row[r].score) << '\n';
    }
}

PredictionTable read_prediction_table(std::istream& in, const TokenTable& products, std::size_t fanout) {
    PredictionTable table;
    table.rows.resize(products.size());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto f = detail::split(line, '\t');
        std::size_t rank = 0;
        double score = 0;
        if (f.size() != 4 || !detail::parse_int(f[1], rank) || !detail::parse_double(f[3], score) || !std::isfinite(score))
            throw ParseError(line_no, "expected 'product TAB rank TAB predicted TAB score'");
        auto key = products.find(f[0]);
        auto predicted = products.find(f[2]);
        if (!key || !predicted) throw ParseError(line_no, "unknown product token");
        auto& row = table.rows[*key];
        if (rank != row.size()) throw ParseError(line_no, "ranks must be contiguous from 0");
        if (!row.empty() && score > row.back().score) throw ParseError(line_no, "predictions must be ordered by score");
        if (fanout > 0 && row.size() >= fanout) throw ParseError(line_no, "row exceeds the configured fan-out");
        row.push_back({*predicted, score, Source::product(*key), 0});
    }
    return table;
}

// ---------------------------------------------------------------------------
// Daily recommenders

DecayedRecommender::DecayedRecommender(std::string name, ProductRecommender base, std::size_t num_products, double alpha,
                                       bool exclude_purchased, std::size_t k)
    : name_(std::move(name)), base_(std::move(base)), alpha_(alpha), exclude_(exclude_purchased), k_(k),
      cache_(num_products), once_(new std::once_flag[num_products]) {}

std::vector<ScoredProduct> DecayedRecommender::recommend(const RecommendRequest& request) const {
    if (request.history.empty()) return {};
    ProductRecommender memo = [this](ProductId p, std::size_t k) -> std::vector<ScoredProduct> {
        if (k != k_ || p >= cache_.size()) return base_(p, k);
        std::call_once(once_[p], [&] { cache_[p] = base_(p, k_); });
        return cache_[p];
    };
    return decayed_daily(request.history, memo, request.day, {alpha_, request.k, exclude_}).items;
}

UserVectorRecommender::UserVectorRecommender(const UserEmbeddingModel& model) : model_(model), index_(model.products) {}

std::vector<ScoredProduct> UserVectorRecommender::recommend(const RecommendRequest& request) const {
    if (!model_.has_vector(request.user)) return {};
    try {
        return user_recommend(model_, index_, request.user, request.k);
    } catch (const Error&) {
        return {};
    }
}

std::vector<ScoredProduct> PopularityRecommender::recommend(const RecommendRequest& request) const {
    if (!request.popularity) return {};
    return popular_recommend(*request.popularity, request.cohort, request.k);
}

std::vector<ScoredProduct> RandomRecommender::recommend(const RecommendRequest& request) const {
    detail::Rng rng(mix64(seed_, request.user, static_cast<std::uint64_t>(request.day)));
    std::vector<ScoredProduct> out;
    const std::size_t k = std::min(request.k, num_products_);
    std::vector<ProductId> picked;
    while (picked.size() < k) {
        auto p = static_cast<ProductId>(detail::uniform_below(rng, num_products_));
        if (std::find(picked.begin(), picked.end(), p) == picked.end()) picked.push_back(p);
    }
    for (std::size_t r = 0; r < picked.size(); ++r) out.push_back({picked[r], 1.0 / static_cast<double>(r + 1), {}, 0});
    return out;
}

}  // namespace prodrec
