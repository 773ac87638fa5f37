#include "prodrec/embedding.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include "prodrec/detail/sgns.hpp"
#include "prodrec/detail/text.hpp"

namespace prodrec {

void TrainConfig::validate() const {
    if (dim < 1) throw Error("dim must be >= 1");
    if (context < 1 || bag_context < 1) throw Error("context windows must be >= 1");
    if (negatives < 1) throw Error("negatives must be >= 1");
    if (!(final_lr > 0) || !(initial_lr > final_lr)) throw Error("learning rates must satisfy initial_lr > final_lr > 0");
    if (subsample_t < 0) throw Error("subsample_t must be non-negative");
    if (workers < 1) throw Error("workers must be >= 1");
}

// ---------------------------------------------------------------------------
// Negative sampling

NegativeSampler::NegativeSampler(std::span<const std::int64_t> counts, double power) {
    const std::size_t n = counts.size();
    weights_.resize(n);
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        weights_[i] = counts[i] > 0 ? std::pow(static_cast<double>(counts[i]), power) : 0.0;
        total += weights_[i];
    }
    if (n == 0 || total <= 0) throw Error("negative sampler needs at least one positive count");
    for (auto& w : weights_) w /= total;

    // Vose's alias method
    prob_.assign(n, 0.0);
    alias_.assign(n, 0);
    std::vector<double> scaled(n);
    std::vector<std::uint32_t> small;
    std::vector<std::uint32_t> large;
    for (std::uint32_t i = 0; i < n; ++i) {
        scaled[i] = weights_[i] * static_cast<double>(n);
        (scaled[i] < 1.0 ? small : large).push_back(i);
    }
    while (!small.empty() && !large.empty()) {
        auto s = small.back();
        small.pop_back();
        auto l = large.back();
        prob_[s] = scaled[s];
        alias_[s] = l;
        scaled[l] = (scaled[l] + scaled[s]) - 1.0;
        if (scaled[l] < 1.0) {
            large.pop_back();
            small.push_back(l);
        }
    }
    for (auto i : large) prob_[i] = 1.0;
    for (auto i : small) prob_[i] = 1.0;
}

std::uint32_t NegativeSampler::draw(detail::Rng& rng) const {
    auto i = static_cast<std::uint32_t>(detail::uniform_below(rng, prob_.size()));
    return detail::uniform01(rng) < prob_[i] ? i : alias_[i];
}

void NegativeSampler::sample_into(std::span<const std::uint32_t> excluded, std::size_t count, detail::Rng& rng,
                                  std::vector<std::uint32_t>& out) const {
    out.clear();
    if (count == 0) return;
    double excluded_mass = 0;
    for (std::size_t i = 0; i < excluded.size(); ++i) {
        auto e = excluded[i];
        if (e >= weights_.size()) continue;
        if (std::find(excluded.begin(), excluded.begin() + static_cast<std::ptrdiff_t>(i), e) !=
            excluded.begin() + static_cast<std::ptrdiff_t>(i))
            continue;
        excluded_mass += weights_[e];
    }
    if (excluded_mass >= 1.0 - 1e-12) throw Error("every sampleable id is excluded");
    while (out.size() < count) {
        auto id = draw(rng);
        if (std::find(excluded.begin(), excluded.end(), id) == excluded.end()) out.push_back(id);
    }
}

std::vector<std::uint32_t> NegativeSampler::sample(std::span<const std::uint32_t> excluded, std::size_t count,
                                                   detail::Rng& rng) const {
    std::vector<std::uint32_t> out;
    sample_into(excluded, count, rng, out);
    return out;
}

std::vector<ProductId> negative_sample(const Vocabulary& vocab, std::span<const ProductId> excluded, std::size_t count,
                                       detail::Rng& rng) {
    NegativeSampler sampler(vocab.counts);
    return sampler.sample(excluded, count, rng);
}

double softmax_prob(const EmbeddingModel& model, ProductId center, ProductId target) {
    const auto P = model.size();
    if (center >= P || target >= P) throw UnknownKeyError("product id out of range");
    std::vector<double> logits(P);
    auto h = model.input.row(center);
    for (std::size_t p = 0; p < P; ++p) {
        logits[p] = dot(h, model.output.row(p));
        if (!std::isfinite(logits[p])) throw Error("non-finite dot product in softmax");
    }
    double m = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double l : logits) z += std::exp(l - m);
    return std::exp(logits[target] - m) / z;
}

// ---------------------------------------------------------------------------
// Training

EmbeddingModel init_model(const Vocabulary& vocab, const TrainConfig& config) {
    config.validate();
    EmbeddingModel model;
    model.products = vocab.products;
    model.config = config;
    model.input = Matrix<float>(vocab.size(), config.dim);
    model.output = Matrix<float>(vocab.size(), config.dim);
    detail::Rng rng(mix64(config.seed, 0x696e6974ULL));
    const double scale = 1.0 / static_cast<double>(config.dim);
    for (auto& v : model.input.values()) v = static_cast<float>((detail::uniform01(rng) - 0.5) * scale);
    return model;
}

namespace {

class LearningRate {
public:
    LearningRate(const TrainConfig& c, std::size_t total) : initial_(c.initial_lr), final_(c.final_lr), total_(std::max<std::size_t>(total, 1)) {}

    double at(std::size_t progress) const {
        double frac = std::min(1.0, static_cast<double>(progress) / static_cast<double>(total_));
        return initial_ - (initial_ - final_) * frac;
    }

private:
    double initial_;
    double final_;
    std::size_t total_;
};

std::vector<double> keep_probabilities(std::span<const std::int64_t> counts, double t) {
    std::vector<double> keep(counts.size(), 1.0);
    if (t <= 0) return keep;
    double total = 0;
    for (auto c : counts) total += static_cast<double>(c);
    for (std::size_t i = 0; i < counts.size(); ++i) {
        if (counts[i] <= 0) continue;
        double f = static_cast<double>(counts[i]) / total;
        keep[i] = std::min(1.0, std::sqrt(t / f));
    }
    return keep;
}

std::vector<int> window_offsets(std::size_t width, bool directed) {
    std::vector<int> offsets;
    auto w = static_cast<int>(width);
    if (!directed)
        for (int j = -w; j <= -1; ++j) offsets.push_back(j);
    for (int j = 1; j <= w; ++j) offsets.push_back(j);
    return offsets;
}

void check_finite(const Matrix<float>& m, const char* what) {
    for (float v : m.values())
        if (!std::isfinite(v)) throw Error(std::string("training diverged: non-finite ") + what);
}

std::vector<std::int64_t> corpus_counts(const Corpus& corpus) {
    std::vector<std::int64_t> counts(corpus.vocab.size(), 0);
    for (const auto& log : corpus.logs)
        for (const auto& r : log.receipts)
            for (auto p : r.products) ++counts.at(p);
    return counts;
}

/// Shared state of one training run.
struct Run {
    const Corpus& corpus;
    const TrainConfig& config;
    const TrainOptions& options;
    NegativeSampler sampler;
    std::vector<double> keep;
    LearningRate lr;
    std::atomic<std::size_t> progress{0};
    bool can_sample = false;

    Run(const Corpus& c, const TrainConfig& cfg, const TrainOptions& opt, const std::vector<std::int64_t>& counts)
        : corpus(c), config(cfg), options(opt), sampler(counts), keep(keep_probabilities(counts, cfg.subsample_t)),
          lr(cfg, cfg.epochs * c.num_purchases()) {
        std::size_t support = 0;
        for (auto n : counts) support += n > 0;
        can_sample = support > 1;
    }

    std::size_t workers() const { return options.on_update ? 1 : config.workers; }

    void negatives(std::uint32_t positive, detail::Rng& rng, std::vector<std::uint32_t>& out) const {
        if (!can_sample) {
            out.clear();
            return;
        }
        std::uint32_t ex[1] = {positive};
        sampler.sample_into(ex, config.negatives, rng, out);
    }

    /// Runs `pass(log, rng)` over every user for every epoch, sharding users across workers.
    template <class Pass>
    void run_epochs(EmbeddingModel& model, Pass&& pass) {
        const std::size_t n_workers = std::min(workers(), std::max<std::size_t>(corpus.logs.size(), 1));
        std::vector<detail::Rng> rngs;
        for (std::size_t w = 0; w < n_workers; ++w) rngs.emplace_back(mix64(config.seed, 0x747261696eULL, w));
        for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
            auto shard = [&](std::size_t w) {
                for (std::size_t i = w; i < corpus.logs.size(); i += n_workers) pass(corpus.logs[i], rngs[w]);
            };
            if (n_workers == 1) {
                shard(0);
            } else {
                std::vector<std::thread> threads;
                for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(shard, w);
                for (auto& t : threads) t.join();
            }
            if (options.on_epoch) options.on_epoch(epoch, model);
        }
    }
};

struct Token {
    ProductId product;
    std::uint32_t receipt;
};

void subsampled(const UserLog& log, const Run& run, detail::Rng& rng, std::vector<Token>& out) {
    out.clear();
    for (const auto& fp : flatten(log, run.config.seed)) {
        double k = run.keep[fp.product];
        if (k < 1.0 && detail::uniform01(rng) >= k) continue;
        out.push_back({fp.product, fp.receipt});
    }
}

EmbeddingModel start_model(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options) {
    if (options.init) {
        if (!(options.init->products == corpus.vocab.products) || options.init->dim() != config.dim)
            throw Error("warm-start model does not match the corpus vocabulary or dimension");
        EmbeddingModel model = *options.init;
        model.config = config;
        return model;
    }
    return init_model(corpus.vocab, config);
}

void require_trainable(const Corpus& corpus, bool bagged) {
    for (const auto& log : corpus.logs) {
        if (bagged ? log.receipts.size() >= 2 : (log.receipts.size() >= 2 || (!log.receipts.empty() && log.receipts[0].products.size() >= 2)))
            return;
    }
    throw Error(bagged ? "no user has two or more receipts; nothing to train"
                       : "no user has two or more purchases; nothing to train");
}

}  // namespace

EmbeddingModel train_prod2vec(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    require_trainable(corpus, false);
    EmbeddingModel model = start_model(corpus, config, options);
    Run run(corpus, config, options, corpus_counts(corpus));
    const auto offsets = window_offsets(config.context, config.directed.value_or(false));

    run.run_epochs(model, [&](const UserLog& log, detail::Rng& rng) {
        thread_local std::vector<Token> seq;
        thread_local std::vector<std::uint32_t> negs;
        thread_local std::vector<float> grad;
        std::size_t base = run.progress.load(std::memory_order_relaxed);
        subsampled(log, run, rng, seq);
        const auto n = static_cast<std::ptrdiff_t>(seq.size());
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            double lr = run.lr.at(base + static_cast<std::size_t>(i));
            for (int off : offsets) {
                auto j = i + off;
                if (j < 0 || j >= n) continue;
                run.negatives(seq[j].product, rng, negs);
                detail::pair_update(model.input, model.output, seq[i].product, seq[j].product, negs, lr, grad);
                if (options.on_update)
                    options.on_update({UpdateKind::product_pair, log.user, seq[i].product, seq[i].receipt,
                                       seq[j].product, seq[j].receipt, off});
            }
        }
        std::size_t len = 0;
        for (const auto& r : log.receipts) len += r.products.size();
        run.progress.fetch_add(len, std::memory_order_relaxed);
    });
    check_finite(model.input, "input vectors");
    check_finite(model.output, "output vectors");
    return model;
}

EmbeddingModel train_bagged_prod2vec(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    require_trainable(corpus, true);
    EmbeddingModel model = start_model(corpus, config, options);
    Run run(corpus, config, options, corpus_counts(corpus));
    const auto offsets = window_offsets(config.bag_context, config.directed.value_or(true));

    run.run_epochs(model, [&](const UserLog& log, detail::Rng& rng) {
        thread_local std::vector<Token> seq;
        thread_local std::vector<std::vector<ProductId>> bags;
        thread_local std::vector<std::uint32_t> negs;
        thread_local std::vector<float> grad;
        std::size_t base = run.progress.load(std::memory_order_relaxed);
        subsampled(log, run, rng, seq);
        const auto m_count = static_cast<std::ptrdiff_t>(log.receipts.size());
        bags.assign(log.receipts.size(), {});
        for (const auto& t : seq) bags[t.receipt].push_back(t.product);

        std::size_t done = 0;
        for (std::ptrdiff_t m = 0; m < m_count; ++m) {
            double lr = run.lr.at(base + done);
            done += log.receipts[static_cast<std::size_t>(m)].products.size();
            for (auto p : bags[m]) {
                for (int off : offsets) {
                    auto other = m + off;
                    if (other < 0 || other >= m_count) continue;
                    for (auto q : bags[other]) {
                        run.negatives(q, rng, negs);
                        detail::pair_update(model.input, model.output, p, q, negs, lr, grad);
                        if (options.on_update)
                            options.on_update({UpdateKind::product_pair, log.user, p, static_cast<std::uint32_t>(m), q,
                                               static_cast<std::uint32_t>(other), off});
                    }
                }
            }
        }
        run.progress.fetch_add(done, std::memory_order_relaxed);
    });
    check_finite(model.input, "input vectors");
    check_finite(model.output, "output vectors");
    return model;
}

UserEmbeddingModel train_user2vec(const Corpus& corpus, const TrainConfig& config, const TrainOptions& options) {
    config.validate();
    if (corpus.num_purchases() == 0) throw Error("corpus has no purchases; nothing to train");
    const std::size_t N = corpus.users.size();

    UserEmbeddingModel result;
    result.products = start_model(corpus, config, options);
    result.users = corpus.users;
    result.user_input = Matrix<float>(N, config.dim);
    result.user_output = Matrix<float>(N, config.dim);
    result.trained.assign(N, 0);
    {
        detail::Rng rng(mix64(config.seed, 0x75736572ULL));
        const double scale = 1.0 / static_cast<double>(config.dim);
        for (auto& v : result.user_input.values()) v = static_cast<float>((detail::uniform01(rng) - 0.5) * scale);
    }

    std::vector<std::int64_t> user_counts(N, 0);
    for (const auto& log : corpus.logs) {
        for (const auto& r : log.receipts) user_counts[log.user] += static_cast<std::int64_t>(r.products.size());
        result.trained[log.user] = 1;
    }
    NegativeSampler user_sampler(user_counts);
    const auto user_keep = keep_probabilities(user_counts, config.subsample_t);
    std::size_t user_support = 0;
    for (auto c : user_counts) user_support += c > 0;

    auto& model = result.products;
    Run run(corpus, config, options, corpus_counts(corpus));
    const bool directed = config.directed.value_or(false);
    const auto c = static_cast<std::ptrdiff_t>(config.context);

    run.run_epochs(model, [&](const UserLog& log, detail::Rng& rng) {
        thread_local std::vector<Token> seq;
        thread_local std::vector<std::uint32_t> context;
        thread_local std::vector<std::uint32_t> members;
        thread_local std::vector<std::uint32_t> negs;
        thread_local std::vector<float> hidden;
        thread_local std::vector<float> grad;
        std::size_t base = run.progress.load(std::memory_order_relaxed);
        subsampled(log, run, rng, seq);
        const auto n = static_cast<std::ptrdiff_t>(seq.size());

        // (a) user plus surrounding products predict the centre product
        for (std::ptrdiff_t i = 0; i < n; ++i) {
            double lr = run.lr.at(base + static_cast<std::size_t>(i));
            context.clear();
            for (std::ptrdiff_t j = directed ? i + 1 : i - c; j <= i + c; ++j)
                if (j != i && j >= 0 && j < n) context.push_back(seq[j].product);
            run.negatives(seq[i].product, rng, negs);
            detail::context_update(result.user_input, log.user, model.input, context, model.output, seq[i].product, negs,
                                   lr, hidden, grad);
            if (options.on_update)
                options.on_update({UpdateKind::user_context, log.user, log.user, 0, seq[i].product, seq[i].receipt, 0});
        }

        // (b) mean of all the user's products predicts the user
        members.clear();
        for (const auto& r : log.receipts) members.insert(members.end(), r.products.begin(), r.products.end());
        std::size_t len = members.size();
        double keep = user_keep[log.user];
        if (keep >= 1.0 || detail::uniform01(rng) < keep) {
            negs.clear();
            if (user_support > 1) {
                std::uint32_t ex[1] = {log.user};
                user_sampler.sample_into(ex, config.negatives, rng, negs);
            }
            double lr = run.lr.at(base + len);
            detail::mean_update(model.input, members, result.user_output, log.user, negs, lr, hidden, grad);
            if (options.on_update)
                options.on_update({UpdateKind::user_prediction, log.user, log.user, 0, log.user, 0, 0});
        }
        run.progress.fetch_add(len, std::memory_order_relaxed);
    });
    check_finite(model.input, "input vectors");
    check_finite(model.output, "output vectors");
    check_finite(result.user_input, "user vectors");
    check_finite(result.user_output, "user output vectors");
    return result;
}

double skipgram_objective(const EmbeddingModel& model, const Corpus& corpus, const TrainConfig& config, bool bagged,
                          std::uint64_t seed) {
    NegativeSampler sampler(corpus_counts(corpus));
    const bool directed = config.directed.value_or(bagged);
    const auto offsets = window_offsets(bagged ? config.bag_context : config.context, directed);
    double total = 0;
    std::size_t pairs = 0;
    std::vector<std::uint32_t> negs;
    auto score = [&](ProductId p, ProductId q, detail::Rng& rng) {
        std::uint32_t ex[1] = {q};
        sampler.sample_into(ex, config.negatives, rng, negs);
        auto h = model.input.row(p);
        double j = detail::log_sigmoid(dot(h, model.output.row(q)));
        for (auto neg : negs) j += detail::log_sigmoid(-dot(h, model.output.row(neg)));
        total += j;
        ++pairs;
    };
    for (const auto& log : corpus.logs) {
        detail::Rng rng(mix64(seed, log.user));
        auto seq = flatten(log, config.seed);
        if (bagged) {
            std::vector<std::vector<ProductId>> bags(log.receipts.size());
            for (const auto& t : seq) bags[t.receipt].push_back(t.product);
            const auto m_count = static_cast<std::ptrdiff_t>(bags.size());
            for (std::ptrdiff_t m = 0; m < m_count; ++m)
                for (auto p : bags[m])
                    for (int off : offsets) {
                        if (m + off < 0 || m + off >= m_count) continue;
                        for (auto q : bags[m + off]) score(p, q, rng);
                    }
        } else {
            const auto n = static_cast<std::ptrdiff_t>(seq.size());
            for (std::ptrdiff_t i = 0; i < n; ++i)
                for (int off : offsets)
                    if (i + off >= 0 && i + off < n) score(seq[i].product, seq[i + off].product, rng);
        }
    }
    if (pairs == 0) throw Error("corpus has no training pairs");
    return total / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

void write_matrix(const std::string& path, const TokenTable& tokens, const Matrix<float>& m,
                  const std::vector<char>* only = nullptr) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    std::size_t rows = 0;
    for (std::size_t i = 0; i < m.rows(); ++i) rows += !only || (*only)[i];
    out << rows << ' ' << m.cols() << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        if (only && !(*only)[i]) continue;
        out << tokens.token(static_cast<std::uint32_t>(i));
        for (float v : m.row(i)) out << ' ' << detail::format_sig9(v);
        out << '\n';
    }
    if (!out) throw Error("failed writing '" + path + "'");
}

std::pair<TokenTable, Matrix<float>> read_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, path + ": missing header");
    auto header = detail::split(line, ' ');
    std::size_t rows = 0;
    std::size_t cols = 0;
    if (header.size() != 2 || !detail::parse_int(header[0], rows) || !detail::parse_int(header[1], cols))
        throw ParseError(1, path + ": header must be 'rows dim'");
    std::vector<std::string> tokens;
    Matrix<float> m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw ParseError(i + 2, path + ": truncated, expected " + std::to_string(rows) + " rows");
        auto fields = detail::split(line, ' ');
        if (fields.size() != cols + 1) throw ParseError(i + 2, path + ": expected token and " + std::to_string(cols) + " values");
        tokens.emplace_back(fields[0]);
        auto row = m.row(i);
        for (std::size_t d = 0; d < cols; ++d)
            if (!detail::parse_real(fields[d + 1], row[d])) throw ParseError(i + 2, path + ": invalid number");
    }
    while (std::getline(in, line))
        if (!line.empty()) throw Error(path + ": more rows than the header declares");
    return {TokenTable(std::move(tokens)), std::move(m)};
}

}  // namespace

void save_model(const EmbeddingModel& model, const std::string& path) {
    write_matrix(path, model.products, model.input);
    write_matrix(path + ".out", model.products, model.output);
}

EmbeddingModel load_model(const std::string& path) {
    auto [tokens, input] = read_matrix(path);
    auto [out_tokens, output] = read_matrix(path + ".out");
    if (!(tokens == out_tokens) || input.cols() != output.cols())
        throw Error("input and output vector files disagree for '" + path + "'");
    EmbeddingModel model;
    model.products = std::move(tokens);
    model.input = std::move(input);
    model.output = std::move(output);
    model.config.dim = model.input.cols();
    return model;
}

void save_user_model(const UserEmbeddingModel& model, const std::string& path) {
    save_model(model.products, path);
    write_matrix(path + ".users", model.users, model.user_input, &model.trained);
    write_matrix(path + ".users.out", model.users, model.user_output, &model.trained);
}

UserEmbeddingModel load_user_model(const std::string& path) {
    UserEmbeddingModel model;
    model.products = load_model(path);
    auto [users, user_input] = read_matrix(path + ".users");
    auto [out_users, user_output] = read_matrix(path + ".users.out");
    if (!(users == out_users) || user_input.cols() != model.products.dim() || user_output.cols() != model.products.dim())
        throw Error("user vector files disagree with the product model for '" + path + "'");
    model.users = std::move(users);
    model.user_input = std::move(user_input);
    model.user_output = std::move(user_output);
    model.trained.assign(model.users.size(), 1);
    return model;
}

}  // namespace prodrec
