#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prodrec/cluster.hpp"
#include "prodrec/corpus.hpp"
#include "prodrec/embedding.hpp"

namespace prodrec {

enum class SourceKind : std::uint8_t { none, product, user, cohort };

/// What produced a recommendation: a purchased product, a user vector, or a cohort list.
struct Source {
    SourceKind kind = SourceKind::none;
    std::uint32_t id = 0;
    CohortKey cohort;

    static Source product(ProductId p) { return {SourceKind::product, p, {}}; }
    static Source user(UserId u) { return {SourceKind::user, u, {}}; }
    static Source of_cohort(CohortKey c) { return {SourceKind::cohort, 0, std::move(c)}; }
};

struct ScoredProduct {
    ProductId product = 0;
    double score = 0.0;
    Source source;
    Timestamp source_time = 0;
};

/// Descending score, ties by ascending product id.
inline bool ranks_before(const ScoredProduct& a, const ScoredProduct& b) {
    return a.score != b.score ? a.score > b.score : a.product < b.product;
}

/// Unit-normalised copies of a set of vectors for cosine retrieval.
class CosineIndex {
public:
    CosineIndex() = default;
    explicit CosineIndex(const Matrix<float>& vectors);
    explicit CosineIndex(const EmbeddingModel& model) : CosineIndex(model.input) {}

    std::size_t size() const noexcept { return unit_.rows(); }
    std::size_t dim() const noexcept { return unit_.cols(); }
    std::span<const double> unit(ProductId p) const { return unit_.row(p); }
    bool is_zero(ProductId p) const { return zero_.at(p) != 0; }

    /// Top-k rows by cosine to `query` (unit length), skipping `exclude`.
    /// When `candidates` is non-empty only those rows are considered.
    std::vector<ScoredProduct> nearest(std::span<const double> query, std::size_t k,
                                       std::optional<ProductId> exclude = std::nullopt,
                                       std::span<const ProductId> candidates = {}) const;

private:
    Matrix<double> unit_;
    std::vector<char> zero_;
};

/// Unit-length copy of `v`; throws Error for a zero or non-finite vector.
std::vector<double> unit_vector(std::span<const float> v);

/// K most cosine-similar products by input vector, query excluded.
std::vector<ScoredProduct> topk_similar(const CosineIndex& index, ProductId query, std::size_t k);
std::vector<ScoredProduct> topk_similar(const EmbeddingModel& model, ProductId query, std::size_t k);

/// Largest-remainder split of `k` proportional to `weights`; every entry gets
/// at least one slot. Requires k >= weights.size().
std::vector<std::size_t> allocate_budget(std::span<const double> weights, std::size_t k);

struct ClusterRecommendation {
    std::vector<ScoredProduct> items;
    /// Query cluster had no transition support; items come from topk_similar.
    bool fallback = false;
    std::vector<std::pair<ClusterId, std::size_t>> allocation;
};

/// Recommends from the clusters most likely to follow the query's cluster.
class ClusterRecommender {
public:
    ClusterRecommender(const EmbeddingModel& model, ClusterModel clusters, TransitionMatrix transitions,
                       std::size_t top_clusters = 3);

    ClusterRecommendation recommend(ProductId query, std::size_t k) const;

    const CosineIndex& index() const noexcept { return index_; }
    const ClusterModel& clusters() const noexcept { return clusters_; }
    const TransitionMatrix& transitions() const noexcept { return transitions_; }

private:
    CosineIndex index_;
    ClusterModel clusters_;
    TransitionMatrix transitions_;
    std::vector<std::vector<ProductId>> members_;
    std::size_t top_clusters_;
};

ClusterRecommendation cluster_recommend(const EmbeddingModel& model, const ClusterModel& clusters,
                                        const TransitionMatrix& transitions, ProductId query, std::size_t k,
                                        std::size_t top_clusters);

/// Top-k products by cosine between the user vector and product input vectors.
/// Throws UnknownKeyError for a user without a trained vector and Error for a zero vector.
std::vector<ScoredProduct> user_recommend(const UserEmbeddingModel& model, const CosineIndex& products, UserId user,
                                          std::size_t k);
std::vector<ScoredProduct> user_recommend(const UserEmbeddingModel& model, UserId user, std::size_t k);

/// Counts F(a, b) of b purchased immediately after a.
struct CoPurchaseModel {
    /// Per source product: successors by descending count, ties by id.
    std::vector<std::vector<std::pair<ProductId, std::int64_t>>> successors;
    std::int64_t total_pairs = 0;

    std::int64_t count(ProductId a, ProductId b) const;
};

CoPurchaseModel copurchase_train(const Corpus& corpus, std::uint64_t seed);
std::vector<ScoredProduct> copurchase_recommend(const CoPurchaseModel& model, ProductId query, std::size_t k);

using RankedCounts = std::vector<std::pair<ProductId, std::int64_t>>;

/// Purchase-count rankings over [computed_at - lookback_days, computed_at).
struct PopularityModel {
    Day computed_at = 0;
    std::int64_t lookback_days = 5;
    std::size_t list_size = 100;
    std::map<CohortKey, RankedCounts> by_cohort;      // (state, age, gender)
    std::map<CohortKey, RankedCounts> by_age_gender;  // state cleared
    std::map<CohortKey, RankedCounts> by_gender;      // state and age cleared
    /// Products purchased in the window: count descending, ties by id.
    RankedCounts global;
    std::size_t num_products = 0;
};

PopularityModel popular_train(const Corpus& corpus, const CohortMap& cohorts, Day computed_at,
                              std::int64_t lookback_days, std::size_t list_size = 100);

/// Cascades (state, age, gender) -> (age, gender) -> gender -> global, then the
/// remaining products by id, until k distinct products are collected. Scores are 1 / (rank + 1). With a seed the
/// returned items are shuffled (scores are reassigned to the new order).
std::vector<ScoredProduct> popular_recommend(const PopularityModel& model, const CohortKey& cohort, std::size_t k,
                                             std::optional<std::uint64_t> shuffle_seed = std::nullopt);

void write_popularity(const PopularityModel& model, const TokenTable& products, std::ostream& out);
PopularityModel read_popularity(std::istream& in, const TokenTable& products);

struct Purchase {
    ProductId product = 0;
    Timestamp time = 0;
};

/// Base product-to-product recommender: (query, k) -> up to k scored products.
using ProductRecommender = std::function<std::vector<ScoredProduct>(ProductId, std::size_t)>;

struct DecayOptions {
    double alpha = 0.9;
    std::size_t k = 20;
    bool exclude_purchased = true;
};

struct DailyRecommendation {
    Day day = 0;
    std::vector<ScoredProduct> items;
};

/// Decay factor for a score whose source is `age_days` old: alpha^age for
/// non-negative scores, alpha^-age for negative ones, so age never raises a score.
double decay_score(double score, double alpha, std::int64_t age_days);

/// Merges per-purchase recommendations into one day's list. Each history item
/// contributes its top-k base recommendations, decayed by the source's age in
/// whole days; duplicates keep their maximum. Throws Error on an empty history
/// or a purchase that is not before `day`.
DailyRecommendation decayed_daily(std::span<const Purchase> history, const ProductRecommender& base, Day day,
                                  const DecayOptions& options);

/// Precomputed product -> predictions table (the serving store's value layout).
struct PredictionTable {
    std::vector<std::vector<ScoredProduct>> rows;  // indexed by product id

    ProductRecommender as_recommender() const;
};

PredictionTable build_prediction_table(std::size_t num_products, const ProductRecommender& base, std::size_t fanout);
/// `product_token TAB rank TAB predicted_token TAB score` lines.
void write_prediction_table(const PredictionTable& table, const TokenTable& products, std::ostream& out);
PredictionTable read_prediction_table(std::istream& in, const TokenTable& products, std::size_t fanout = 0);

// ---------------------------------------------------------------------------
// Daily recommenders used by evaluation and the CLI

struct RecommendRequest {
    UserId user = 0;
    /// Purchases strictly before `day`, ascending by time.
    std::span<const Purchase> history;
    Day day = 0;
    CohortKey cohort;
    /// Popularity model current for `day`; may be null.
    const PopularityModel* popularity = nullptr;
    std::size_t k = 20;
};

class Recommender {
public:
    virtual ~Recommender() = default;
    virtual std::string name() const = 0;
    /// Up to k distinct products, best first. Empty means "no opinion"; callers back-fill.
    virtual std::vector<ScoredProduct> recommend(const RecommendRequest& request) const = 0;
};

/// Time-decayed consensus over a user's history on top of a product-to-product
/// recommender. Base results for the configured k are memoised per product;
/// the cache is safe for concurrent readers.
class DecayedRecommender final : public Recommender {
public:
    DecayedRecommender(std::string name, ProductRecommender base, std::size_t num_products, double alpha,
                       bool exclude_purchased = true, std::size_t k = 20);

    std::string name() const override { return name_; }
    std::vector<ScoredProduct> recommend(const RecommendRequest& request) const override;

private:
    std::string name_;
    ProductRecommender base_;
    double alpha_;
    bool exclude_;
    std::size_t k_;
    mutable std::vector<std::vector<ScoredProduct>> cache_;
    std::unique_ptr<std::once_flag[]> once_;
};

class UserVectorRecommender final : public Recommender {
public:
    explicit UserVectorRecommender(const UserEmbeddingModel& model);
    std::string name() const override { return "user2vec"; }
    std::vector<ScoredProduct> recommend(const RecommendRequest& request) const override;

private:
    const UserEmbeddingModel& model_;
    CosineIndex index_;
};

/// Cohort popularity from the request's popularity model.
class PopularityRecommender final : public Recommender {
public:
    std::string name() const override { return "popular"; }
    std::vector<ScoredProduct> recommend(const RecommendRequest& request) const override;
};

/// K distinct products uniformly at random, keyed on (seed, user, day).
class RandomRecommender final : public Recommender {
public:
    RandomRecommender(std::size_t num_products, std::uint64_t seed) : num_products_(num_products), seed_(seed) {}
    std::string name() const override { return "random"; }
    std::vector<ScoredProduct> recommend(const RecommendRequest& request) const override;

private:
    std::size_t num_products_;
    std::uint64_t seed_;
};

}  // namespace prodrec
