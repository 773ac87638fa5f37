#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "prodrec/datagen.hpp"
#include "prodrec/embedding.hpp"
#include "prodrec/eval.hpp"
#include "prodrec/serve.hpp"

namespace prodrec {

struct CorpusConfig {
    std::int64_t min_count = 1;
    double min_price = 5.0;
    /// Train/test boundary (YYYY-MM-DD, UTC midnight); empty means no split.
    std::string split_date;
};

enum class TrainMethod { prod2vec, bagged_prod2vec, user2vec };

std::string_view to_string(TrainMethod m);
TrainMethod parse_train_method(std::string_view s);

struct TrainSection {
    TrainMethod method = TrainMethod::bagged_prod2vec;
    TrainConfig params;
};

struct ClusterConfig {
    std::size_t clusters = 100;
    std::size_t max_iters = 100;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    /// Seed of the within-receipt ordering used for transition counts.
    std::uint64_t flatten_seed = 1;
};

struct RecommendConfig {
    std::size_t k = 20;
    double alpha = 0.9;
    std::size_t top_clusters = 3;
    bool exclude_purchased = true;
    /// Predictions stored per product for serving and daily merges.
    std::size_t fanout = 20;
};

struct ServeConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string data_dir = "serve-data";
    std::int64_t ttl_days = 60;
    std::int64_t popularity_lookback_days = 5;
    std::size_t popularity_list_size = 100;
    ServiceConfig service;
};

struct AppConfig {
    std::uint64_t seed = 1;
    CorpusConfig corpus;
    GenConfig gen;
    TrainSection train;
    ClusterConfig cluster;
    RecommendConfig recommend;
    EvalConfig evaluate;
    ServeConfig serve;
};

/// Defaults overlaid with the keys present in `json_text`. Unknown keys and
/// ill-typed values throw Error.
AppConfig parse_config(std::string_view json_text);
AppConfig load_config(const std::string& path);
/// Every setting, including defaults, as pretty-printed JSON.
std::string dump_config(const AppConfig& config);

}  // namespace prodrec
