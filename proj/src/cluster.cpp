#include "prodrec/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <thread>

#include "prodrec/detail/random.hpp"
#include "prodrec/detail/text.hpp"

namespace prodrec {

std::vector<std::vector<ProductId>> ClusterModel::members() const {
    std::vector<std::vector<ProductId>> out(num_clusters);
    for (ProductId p = 0; p < assignment.size(); ++p) out[assignment[p]].push_back(p);
    return out;
}

namespace {

Matrix<double> normalized_rows(const Matrix<float>& m) {
    Matrix<double> out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto src = m.row(i);
        auto dst = out.row(i);
        double norm = std::sqrt(dot(src, src));
        if (norm == 0) continue;
        for (std::size_t d = 0; d < src.size(); ++d) dst[d] = src[d] / norm;
    }
    return out;
}

void normalize(std::span<double> v) {
    double norm = std::sqrt(dot(v, v));
    if (norm == 0) return;
    for (auto& x : v) x /= norm;
}

struct Assignment {
    ClusterId cluster;
    double cosine;
};

Assignment best_cluster(std::span<const double> x, const Matrix<double>& centroids) {
    Assignment best{0, dot(x, centroids.row(0))};
    for (ClusterId c = 1; c < centroids.rows(); ++c) {
        double s = dot(x, centroids.row(c));
        if (s > best.cosine) best = {c, s};
    }
    return best;
}

}  // namespace

ClusterModel kmeans_cosine(const Matrix<float>& vectors, std::size_t clusters, std::size_t max_iters,
                           std::uint64_t seed, std::size_t workers) {
    const std::size_t P = vectors.rows();
    const std::size_t D = vectors.cols();
    if (clusters < 1 || clusters > P) throw Error("cluster count must be in [1, P]");
    const auto x = normalized_rows(vectors);
    {
        bool all_same = true;
        for (std::size_t i = 1; i < P && all_same; ++i)
            all_same = std::equal(vectors.row(i).begin(), vectors.row(i).end(), vectors.row(0).begin());
        if (all_same && P > 1 && clusters > 1) throw Error("all vectors are identical; nothing to cluster");
    }

    ClusterModel model;
    model.num_clusters = clusters;
    model.centroids = Matrix<double>(clusters, D);

    // k-means++ seeding on cosine distance
    detail::Rng rng(mix64(seed, 0x6b6d65616e73ULL));
    std::vector<char> chosen(P, 0);
    std::vector<double> dist(P, std::numeric_limits<double>::infinity());
    std::size_t first = detail::uniform_below(rng, P);
    for (std::size_t c = 0; c < clusters; ++c) {
        std::size_t pick = first;
        if (c > 0) {
            double total = 0;
            for (std::size_t i = 0; i < P; ++i) total += chosen[i] ? 0.0 : dist[i] * dist[i];
            if (total > 0) {
                double r = detail::uniform01(rng) * total;
                pick = P;
                for (std::size_t i = 0; i < P; ++i) {
                    if (chosen[i]) continue;
                    r -= dist[i] * dist[i];
                    if (r < 0) {
                        pick = i;
                        break;
                    }
                }
                if (pick == P)
                    for (std::size_t i = P; i-- > 0;)
                        if (!chosen[i] && dist[i] > 0) {
                            pick = i;
                            break;
                        }
            } else {
                pick = static_cast<std::size_t>(std::find(chosen.begin(), chosen.end(), 0) - chosen.begin());
            }
        }
        chosen[pick] = 1;
        std::copy(x.row(pick).begin(), x.row(pick).end(), model.centroids.row(c).begin());
        for (std::size_t i = 0; i < P; ++i) dist[i] = std::min(dist[i], std::max(0.0, 1.0 - dot(x.row(i), x.row(pick))));
    }

    model.assignment.assign(P, 0);
    std::vector<Assignment> assigned(P);
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(workers, P));
    auto assign_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) assigned[i] = best_cluster(x.row(i), model.centroids);
    };

    for (std::size_t iter = 0; iter < std::max<std::size_t>(max_iters, 1); ++iter) {
        if (n_workers == 1) {
            assign_range(0, P);
        } else {
            std::vector<std::thread> threads;
            std::size_t chunk = (P + n_workers - 1) / n_workers;
            for (std::size_t w = 0; w < n_workers; ++w)
                threads.emplace_back(assign_range, std::min(P, w * chunk), std::min(P, (w + 1) * chunk));
            for (auto& t : threads) t.join();
        }
        std::size_t changed = 0;
        std::vector<std::size_t> sizes(clusters, 0);
        for (std::size_t i = 0; i < P; ++i) {
            if (iter == 0 || assigned[i].cluster != model.assignment[i]) ++changed;
            model.assignment[i] = assigned[i].cluster;
            ++sizes[assigned[i].cluster];
        }

        // re-seed empty clusters with the worst-fitting point of a multi-member cluster
        for (ClusterId c = 0; c < clusters; ++c) {
            if (sizes[c] > 0) continue;
            std::size_t worst = P;
            for (std::size_t i = 0; i < P; ++i) {
                if (sizes[model.assignment[i]] < 2) continue;
                if (worst == P || assigned[i].cosine < assigned[worst].cosine) worst = i;
            }
            if (worst == P) break;
            --sizes[model.assignment[worst]];
            model.assignment[worst] = c;
            assigned[worst] = {c, 1.0};
            sizes[c] = 1;
            std::copy(x.row(worst).begin(), x.row(worst).end(), model.centroids.row(c).begin());
            ++changed;
        }

        // centroid update, reduced in point order per cluster
        Matrix<double> sums(clusters, D);
        for (std::size_t i = 0; i < P; ++i) {
            auto s = sums.row(model.assignment[i]);
            auto v = x.row(i);
            for (std::size_t d = 0; d < D; ++d) s[d] += v[d];
        }
        for (ClusterId c = 0; c < clusters; ++c) {
            auto s = sums.row(c);
            if (dot(s, s) == 0) continue;  // keep the previous centroid
            normalize(s);
            std::copy(s.begin(), s.end(), model.centroids.row(c).begin());
        }

        double objective = 0;
        for (std::size_t i = 0; i < P; ++i) objective += dot(x.row(i), model.centroids.row(model.assignment[i]));
        model.objective_trace.push_back(objective);
        if (changed == 0) break;
    }
    return model;
}

ClusterModel kmeans_cosine(const EmbeddingModel& model, std::size_t clusters, std::size_t max_iters, std::uint64_t seed,
                           std::size_t workers) {
    return kmeans_cosine(model.input, clusters, max_iters, seed, workers);
}

TransitionMatrix estimate_transitions(const Corpus& corpus, const ClusterModel& clusters, std::uint64_t seed) {
    if (clusters.assignment.size() != corpus.vocab.size())
        throw Error("cluster assignment does not cover the corpus vocabulary");
    const std::size_t C = clusters.num_clusters;
    TransitionMatrix t;
    t.theta = Matrix<double>(C, C);
    t.support.assign(C, 0);
    Matrix<double> counts(C, C);
    for (const auto& log : corpus.logs) {
        auto seq = flatten(log, seed);
        for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
            auto a = clusters.assignment[seq[i].product];
            auto b = clusters.assignment[seq[i + 1].product];
            counts(a, b) += 1;
            ++t.support[a];
        }
    }
    for (std::size_t i = 0; i < C; ++i) {
        if (t.support[i] == 0) continue;
        for (std::size_t j = 0; j < C; ++j) t.theta(i, j) = counts(i, j) / static_cast<double>(t.support[i]);
    }
    return t;
}

void write_clusters(const TokenTable& products, const ClusterModel& clusters, std::ostream& out) {
    for (ProductId p = 0; p < clusters.assignment.size(); ++p) out << products.token(p) << '\t' << clusters.assignment[p] << '\n';
}

ClusterModel read_clusters(std::istream& in, const TokenTable& products) {
    ClusterModel model;
    std::vector<std::int64_t> assignment(products.size(), -1);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = detail::split(line, '\t');
        ClusterId c = 0;
        if (fields.size() != 2 || !detail::parse_int(fields[1], c)) throw ParseError(line_no, "expected 'token TAB cluster_id'");
        auto p = products.find(fields[0]);
        if (!p) throw ParseError(line_no, "unknown product '" + std::string(fields[0]) + "'");
        assignment[*p] = c;
        model.num_clusters = std::max<std::size_t>(model.num_clusters, c + 1);
    }
    for (auto a : assignment) {
        if (a < 0) throw Error("cluster file does not assign every product");
        model.assignment.push_back(static_cast<ClusterId>(a));
    }
    return model;
}

void write_transitions(const TransitionMatrix& t, std::ostream& out) {
    out << t.size() << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (std::size_t j = 0; j < t.size(); ++j) out << detail::format_shortest(t.theta(i, j)) << '\t';
        out << t.support[i] << '\n';
    }
}

TransitionMatrix read_transitions(std::istream& in) {
    std::string line;
    std::size_t C = 0;
    if (!std::getline(in, line) || !detail::parse_int(line, C)) throw ParseError(1, "expected cluster count header");
    TransitionMatrix t;
    t.theta = Matrix<double>(C, C);
    t.support.assign(C, 0);
    for (std::size_t i = 0; i < C; ++i) {
        if (!std::getline(in, line)) throw ParseError(i + 2, "truncated transition matrix");
        auto fields = detail::split(line, '\t');
        if (fields.size() != C + 1) throw ParseError(i + 2, "expected C probabilities and a support count");
        for (std::size_t j = 0; j < C; ++j)
            if (!detail::parse_double(fields[j], t.theta(i, j))) throw ParseError(i + 2, "invalid probability");
        if (!detail::parse_int(fields[C], t.support[i])) throw ParseError(i + 2, "invalid support count");
    }
    return t;
}

double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
    if (a.size() != b.size()) throw Error("labelings differ in length");
    const double n = static_cast<double>(a.size());
    std::map<std::pair<std::uint32_t, std::uint32_t>, double> joint;
    std::map<std::uint32_t, double> rows;
    std::map<std::uint32_t, double> cols;
    for (std::size_t i = 0; i < a.size(); ++i) {
        joint[{a[i], b[i]}] += 1;
        rows[a[i]] += 1;
        cols[b[i]] += 1;
    }
    auto pairs = [](double k) { return k * (k - 1) / 2; };
    double index = 0;
    double sum_rows = 0;
    double sum_cols = 0;
    for (const auto& [k, v] : joint) index += pairs(v);
    for (const auto& [k, v] : rows) sum_rows += pairs(v);
    for (const auto& [k, v] : cols) sum_cols += pairs(v);
    double expected = sum_rows * sum_cols / pairs(n);
    double max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index == expected) return 1.0;
    return (index - expected) / (max_index - expected);
}

}  // namespace prodrec
