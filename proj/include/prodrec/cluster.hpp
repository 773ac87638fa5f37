#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "prodrec/corpus.hpp"
#include "prodrec/embedding.hpp"
#include "prodrec/matrix.hpp"

namespace prodrec {

struct ClusterModel {
    std::size_t num_clusters = 0;
    std::vector<ClusterId> assignment;  // per product
    Matrix<double> centroids;           // C x D, unit rows
    /// Sum of cosines to the own centroid after each iteration.
    std::vector<double> objective_trace;

    std::vector<std::vector<ProductId>> members() const;
};

/// Spherical k-means with k-means++ seeding. Assignment ties go to the lowest
/// cluster id; an emptied cluster is re-seeded with the point that has the
/// lowest cosine to its own centroid.
ClusterModel kmeans_cosine(const Matrix<float>& vectors, std::size_t clusters, std::size_t max_iters,
                           std::uint64_t seed, std::size_t workers = 1);
ClusterModel kmeans_cosine(const EmbeddingModel& model, std::size_t clusters, std::size_t max_iters,
                           std::uint64_t seed, std::size_t workers = 1);

/// Maximum-likelihood cluster-to-cluster purchase transitions.
struct TransitionMatrix {
    Matrix<double> theta;               // C x C
    std::vector<std::int64_t> support;  // purchases of cluster i that have a successor

    std::size_t size() const noexcept { return support.size(); }
    bool has_support(ClusterId c) const { return support.at(c) > 0; }
};

/// Counts consecutive purchase pairs of each user's flattened sequence
/// (flattened with `seed`). Pairs never cross users.
TransitionMatrix estimate_transitions(const Corpus& corpus, const ClusterModel& clusters, std::uint64_t seed);

void write_clusters(const TokenTable& products, const ClusterModel& clusters, std::ostream& out);
/// Reads `token TAB cluster_id` lines; every product of `products` must appear.
ClusterModel read_clusters(std::istream& in, const TokenTable& products);

void write_transitions(const TransitionMatrix& transitions, std::ostream& out);
TransitionMatrix read_transitions(std::istream& in);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b);

}  // namespace prodrec
