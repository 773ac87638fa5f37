#include "prodrec/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

namespace prodrec {

using Json = nlohmann::ordered_json;

std::string_view to_string(TrainMethod m) {
    switch (m) {
        case TrainMethod::prod2vec: return "prod2vec";
        case TrainMethod::bagged_prod2vec: return "bagged-prod2vec";
        case TrainMethod::user2vec: return "user2vec";
    }
    return "?";
}

TrainMethod parse_train_method(std::string_view s) {
    if (s == "prod2vec") return TrainMethod::prod2vec;
    if (s == "bagged-prod2vec") return TrainMethod::bagged_prod2vec;
    if (s == "user2vec") return TrainMethod::user2vec;
    throw Error("unknown training method '" + std::string(s) + "' (expected prod2vec, bagged-prod2vec or user2vec)");
}

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw Error("config key '" + path + "': " + what);
}

template <class T>
void read_value(const Json& j, T& out, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
        if (!j.is_boolean()) bad(path, "expected a boolean");
        out = j.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
        if (!j.is_number_integer()) bad(path, "expected an integer");
        if constexpr (std::is_unsigned_v<T>) {
            if (j.is_number_unsigned()) out = static_cast<T>(j.get<std::uint64_t>());
            else if (j.get<std::int64_t>() < 0) bad(path, "expected a non-negative integer");
            else out = static_cast<T>(j.get<std::int64_t>());
        } else {
            out = static_cast<T>(j.get<std::int64_t>());
        }
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!j.is_number()) bad(path, "expected a number");
        out = j.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
        if (!j.is_string()) bad(path, "expected a string");
        out = j.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::optional<bool>>) {
        if (j.is_null()) out.reset();
        else if (j.is_boolean()) out = j.get<bool>();
        else bad(path, "expected a boolean or null");
    } else if constexpr (std::is_same_v<T, std::optional<Day>>) {
        if (j.is_null()) out.reset();
        else if (j.is_string()) {
            try {
                out = parse_date(j.get<std::string>());
            } catch (const Error& e) {
                bad(path, e.what());
            }
        } else bad(path, "expected a YYYY-MM-DD string or null");
    } else if constexpr (std::is_same_v<T, IntRange>) {
        if (!j.is_array() || j.size() != 2) bad(path, "expected [lo, hi]");
        read_value(j[0], out.lo, path + "[0]");
        read_value(j[1], out.hi, path + "[1]");
    } else if constexpr (std::is_same_v<T, PriceRange>) {
        if (!j.is_array() || j.size() != 2) bad(path, "expected [lo, hi]");
        read_value(j[0], out.lo, path + "[0]");
        read_value(j[1], out.hi, path + "[1]");
    } else if constexpr (std::is_same_v<T, CohortSpec>) {
        if (!j.is_object()) bad(path, "expected {\"cohort\": \"gender/age/state\", \"weight\": w}");
        for (const auto& [k, v] : j.items())
            if (k != "cohort" && k != "weight") bad(path + "." + k, "unknown key");
        if (j.contains("cohort")) {
            std::string s;
            read_value(j["cohort"], s, path + ".cohort");
            try {
                out.key = parse_cohort(s);
            } catch (const Error& e) {
                bad(path + ".cohort", e.what());
            }
        }
        if (j.contains("weight")) read_value(j["weight"], out.weight, path + ".weight");
    } else if constexpr (std::is_same_v<T, TrainMethod>) {
        std::string s;
        read_value(j, s, path);
        try {
            out = parse_train_method(s);
        } catch (const Error& e) {
            bad(path, e.what());
        }
    } else {
        // std::vector<...>
        if (!j.is_array()) bad(path, "expected an array");
        out.clear();
        for (std::size_t i = 0; i < j.size(); ++i) {
            typename T::value_type v{};
            read_value(j[i], v, path + "[" + std::to_string(i) + "]");
            out.push_back(std::move(v));
        }
    }
}

template <class T>
Json write_value(const T& v) {
    if constexpr (std::is_same_v<T, std::optional<bool>>) {
        return v ? Json(*v) : Json(nullptr);
    } else if constexpr (std::is_same_v<T, std::optional<Day>>) {
        return v ? Json(format_date(*v)) : Json(nullptr);
    } else if constexpr (std::is_same_v<T, IntRange>) {
        return Json::array({v.lo, v.hi});
    } else if constexpr (std::is_same_v<T, PriceRange>) {
        return Json::array({v.lo, v.hi});
    } else if constexpr (std::is_same_v<T, CohortSpec>) {
        return Json{{"cohort", to_string(v.key)}, {"weight", v.weight}};
    } else if constexpr (std::is_same_v<T, TrainMethod>) {
        return Json(std::string(to_string(v)));
    } else if constexpr (std::is_arithmetic_v<T> || std::is_same_v<T, std::string>) {
        return Json(v);
    } else {
        Json a = Json::array();
        for (const auto& x : v) a.push_back(write_value(x));
        return a;
    }
}

class Reader {
public:
    Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) bad(path_.empty() ? "<root>" : path_, "expected an object");
    }

    template <class T>
    void field(const char* name, T& v) {
        seen_.insert(name);
        if (j_.contains(name)) read_value(j_[name], v, join(name));
    }

    template <class S>
    void section(const char* name, S& s) {
        seen_.insert(name);
        if (!j_.contains(name)) return;
        Reader sub(j_[name], join(name));
        describe(sub, s);
        sub.finish();
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) bad(join(k.c_str()), "unknown key");
    }

private:
    std::string join(const char* name) const { return path_.empty() ? name : path_ + "." + name; }

    const Json& j_;
    std::string path_;
    std::set<std::string, std::less<>> seen_;
};

class Writer {
public:
    explicit Writer(Json& j) : j_(j) {}

    template <class T>
    void field(const char* name, T& v) {
        j_[name] = write_value(v);
    }

    template <class S>
    void section(const char* name, S& s) {
        Json sub = Json::object();
        Writer w(sub);
        describe(w, s);
        j_[name] = std::move(sub);
    }

private:
    Json& j_;
};

template <class V>
void describe(V& v, CorpusConfig& c) {
    v.field("min_count", c.min_count);
    v.field("min_price", c.min_price);
    v.field("split_date", c.split_date);
}

template <class V>
void describe(V& v, GenConfig& c) {
    v.field("num_users", c.num_users);
    v.field("num_products", c.num_products);
    v.field("num_groups", c.num_groups);
    v.field("receipts_per_user", c.receipts_per_user);
    v.field("items_per_receipt", c.items_per_receipt);
    v.field("within_group_prob", c.within_group_prob);
    v.field("group_transition", c.group_transition);
    v.field("cohort_mix", c.cohort_mix);
    v.field("cohort_bias", c.cohort_bias);
    v.field("cohort_favorites", c.cohort_favorites);
    v.field("popularity_skew", c.popularity_skew);
    v.field("group_prices", c.group_prices);
    v.field("start_time", c.start_time);
    v.field("gap_days", c.gap_days);
    v.field("trend_period_days", c.trend_period_days);
    v.field("trend_size", c.trend_size);
    v.field("trend_boost", c.trend_boost);
    v.field("shopper_fraction", c.shopper_fraction);
    v.field("seed", c.seed);
}

template <class V>
void describe(V& v, TrainSection& c) {
    v.field("method", c.method);
    v.field("dim", c.params.dim);
    v.field("context", c.params.context);
    v.field("bag_context", c.params.bag_context);
    v.field("negatives", c.params.negatives);
    v.field("epochs", c.params.epochs);
    v.field("initial_lr", c.params.initial_lr);
    v.field("final_lr", c.params.final_lr);
    v.field("subsample_t", c.params.subsample_t);
    v.field("directed", c.params.directed);
    v.field("workers", c.params.workers);
    v.field("seed", c.params.seed);
}

template <class V>
void describe(V& v, ClusterConfig& c) {
    v.field("clusters", c.clusters);
    v.field("max_iters", c.max_iters);
    v.field("seed", c.seed);
    v.field("workers", c.workers);
    v.field("flatten_seed", c.flatten_seed);
}

template <class V>
void describe(V& v, RecommendConfig& c) {
    v.field("k", c.k);
    v.field("alpha", c.alpha);
    v.field("top_clusters", c.top_clusters);
    v.field("exclude_purchased", c.exclude_purchased);
    v.field("fanout", c.fanout);
}

template <class V>
void describe(V& v, EvalConfig& c) {
    v.field("k", c.k);
    v.field("horizons", c.horizons);
    v.field("alpha", c.alpha);
    v.field("refresh_days", c.refresh_days);
    v.field("lookback_days", c.lookback_days);
    v.field("popularity_list_size", c.popularity_list_size);
    v.field("seed", c.seed);
    v.field("workers", c.workers);
    v.field("per_user", c.per_user);
    v.field("start_day", c.start_day);
}

template <class V>
void describe(V& v, ServeConfig& c) {
    v.field("host", c.host);
    v.field("port", c.port);
    v.field("data_dir", c.data_dir);
    v.field("ttl_days", c.ttl_days);
    v.field("popularity_lookback_days", c.popularity_lookback_days);
    v.field("popularity_list_size", c.popularity_list_size);
    v.field("alpha", c.service.alpha);
    v.field("k", c.service.k);
    v.field("exclude_purchased", c.service.exclude_purchased);
    v.field("seed", c.service.seed);
}

template <class V>
void describe(V& v, AppConfig& c) {
    v.field("seed", c.seed);
    v.section("corpus", c.corpus);
    v.section("gen", c.gen);
    v.section("train", c.train);
    v.section("cluster", c.cluster);
    v.section("recommend", c.recommend);
    v.section("evaluate", c.evaluate);
    v.section("serve", c.serve);
}

}  // namespace

AppConfig parse_config(std::string_view json_text) {
    Json j;
    try {
        j = Json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(std::string("config is not valid JSON: ") + e.what());
    }
    AppConfig config;
    Reader r(j, "");
    describe(r, config);
    r.finish();
    validate(config.gen);
    config.train.params.validate();
    config.evaluate.validate();
    return config;
}

AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string dump_config(const AppConfig& config) {
    Json j = Json::object();
    Writer w(j);
    AppConfig copy = config;
    describe(w, copy);
    return j.dump(2) + "\n";
}

}  // namespace prodrec
