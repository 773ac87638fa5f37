#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prodrec/corpus.hpp"
#include "prodrec/detail/random.hpp"
#include "prodrec/matrix.hpp"

namespace prodrec {

struct TrainConfig {
    std::size_t dim = 300;
    std::size_t context = 5;      // product-level window c
    std::size_t bag_context = 5;  // receipt-level window n
    std::size_t negatives = 10;
    std::size_t epochs = 5;
    double initial_lr = 0.025;
    double final_lr = 1e-4;
    /// Frequent-token downsampling threshold; 0 disables.
    double subsample_t = 1e-4;
    /// Future-only context. Unset means true for bagged training, false otherwise.
    std::optional<bool> directed;
    std::size_t workers = 1;
    std::uint64_t seed = 1;

    void validate() const;
};

struct EmbeddingModel {
    TokenTable products;
    Matrix<float> input;   // v_p, P x D
    Matrix<float> output;  // v'_p, P x D
    TrainConfig config;

    std::size_t size() const noexcept { return input.rows(); }
    std::size_t dim() const noexcept { return input.cols(); }

    friend bool operator==(const EmbeddingModel& a, const EmbeddingModel& b) {
        return a.products == b.products && a.input == b.input && a.output == b.output;
    }
};

struct UserEmbeddingModel {
    EmbeddingModel products;
    TokenTable users;
    Matrix<float> user_input;   // v_u, N x D
    Matrix<float> user_output;  // v'_u, N x D
    std::vector<char> trained;  // users that had purchases

    bool has_vector(UserId user) const { return user < trained.size() && trained[user]; }
};

/// Draws ids i.i.d. from counts^power (Walker alias table).
class NegativeSampler {
public:
    NegativeSampler() = default;
    explicit NegativeSampler(std::span<const std::int64_t> counts, double power = 0.75);

    std::uint32_t draw(detail::Rng& rng) const;

    /// `count` draws, rejecting members of `excluded`. Throws Error if every
    /// id with positive weight is excluded.
    std::vector<std::uint32_t> sample(std::span<const std::uint32_t> excluded, std::size_t count, detail::Rng& rng) const;
    void sample_into(std::span<const std::uint32_t> excluded, std::size_t count, detail::Rng& rng,
                     std::vector<std::uint32_t>& out) const;

    std::size_t size() const noexcept { return prob_.size(); }
    double weight(std::uint32_t id) const { return weights_.at(id); }

private:
    std::vector<double> prob_;
    std::vector<std::uint32_t> alias_;
    std::vector<double> weights_;  // normalised target distribution
};

/// Product negatives from the vocabulary's unigram^0.75 distribution.
std::vector<ProductId> negative_sample(const Vocabulary& vocab, std::span<const ProductId> excluded, std::size_t count,
                                       detail::Rng& rng);

/// exp(v_center . v'_target) / sum_p exp(v_center . v'_p). Throws Error on a
/// non-finite dot product. Enumerates the vocabulary; meant for small models.
double softmax_prob(const EmbeddingModel& model, ProductId center, ProductId target);

enum class UpdateKind : std::uint8_t { product_pair, user_context, user_prediction };

/// One positive update, as reported to an observer. Receipt indices refer to
/// the user's log; offsets are positions (prod2vec) or receipts (bagged).
struct UpdateRecord {
    UpdateKind kind = UpdateKind::product_pair;
    UserId user = 0;
    std::uint32_t center = 0;
    std::uint32_t center_receipt = 0;
    std::uint32_t target = 0;
    std::uint32_t target_receipt = 0;
    int offset = 0;
};

struct TrainOptions {
    /// Warm start: copy vectors from a previous model over the same vocabulary.
    const EmbeddingModel* init = nullptr;
    /// Called for every positive update (single-worker runs only).
    std::function<void(const UpdateRecord&)> on_update;
    /// Called after each epoch with the model so far.
    std::function<void(std::size_t epoch, const EmbeddingModel&)> on_epoch;
};

/// Initial vectors: input uniform in [-0.5/D, 0.5/D], output zero.
EmbeddingModel init_model(const Vocabulary& vocab, const TrainConfig& config);

EmbeddingModel train_prod2vec(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options = {});
EmbeddingModel train_bagged_prod2vec(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options = {});
UserEmbeddingModel train_user2vec(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options = {});

/// Mean negative-sampling objective over every skip-gram pair of `corpus`
/// (no subsampling), with negatives drawn from `seed`. Identical seeds give
/// identical pairs and negatives, so values are comparable across models.
double skipgram_objective(const EmbeddingModel& model, const Corpus& corpus, const TrainConfig& config, bool bagged,
                          std::uint64_t seed);

void save_model(const EmbeddingModel& model, const std::string& path);
EmbeddingModel load_model(const std::string& path);
void save_user_model(const UserEmbeddingModel& model, const std::string& path);
UserEmbeddingModel load_user_model(const std::string& path);

}  // namespace prodrec
