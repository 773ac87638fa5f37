#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <pthread.h>
#include <signal.h>
#include <unistd.h>

#include "prodrec/cluster.hpp"
#include "prodrec/config.hpp"
#include "prodrec/corpus.hpp"
#include "prodrec/datagen.hpp"
#include "prodrec/detail/text.hpp"
#include "prodrec/embedding.hpp"
#include "prodrec/eval.hpp"
#include "prodrec/recommend.hpp"
#include "prodrec/serve.hpp"

namespace fs = std::filesystem;
using namespace prodrec;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    return out;
}

Vocabulary vocabulary_of(const TokenTable& products) {
    Vocabulary v;
    v.products = products;
    v.counts.assign(products.size(), 0);
    v.median_prices.assign(products.size(), 0.0);
    v.min_count = 0;
    return v;
}

struct Data {
    ParsedLogs parsed;
    Corpus train;
    Corpus test;
};

/// Parses the logs and maps them onto `products` when given, otherwise onto
/// the vocabulary built from the train half.
Data load_data(const std::string& receipts, const std::string& cohorts, const CorpusConfig& cfg,
               const TokenTable* products = nullptr) {
    Data d;
    d.parsed = parse_logs(read_file(receipts), cohorts.empty() ? std::string() : read_file(cohorts));
    const Corpus& raw = d.parsed.corpus;
    const Timestamp cutoff =
        cfg.split_date.empty() ? std::numeric_limits<Timestamp>::max() : day_start(parse_date(cfg.split_date));
    if (products) {
        auto halves = split_by_time(raw, cutoff);
        auto vocab = vocabulary_of(*products);
        d.train = apply_vocabulary(halves.train, vocab);
        d.test = apply_vocabulary(halves.test, vocab);
    } else {
        auto halves = split_with_train_vocabulary(raw, cutoff, cfg.min_count, cfg.min_price);
        d.train = std::move(halves.train);
        d.test = std::move(halves.test);
    }
    return d;
}

struct Artifacts {
    std::string model;
    std::string clusters;
    std::string transitions;
};

/// Loads a model file, falling back to a user2vec model when `.users` exists.
struct LoadedModel {
    std::optional<EmbeddingModel> products;
    std::optional<UserEmbeddingModel> users;

    const TokenTable& tokens() const { return products ? products->products : users->products.products; }
};

LoadedModel load_any_model(const std::string& path) {
    LoadedModel m;
    if (fs::exists(path + ".users")) {
        m.users = load_user_model(path);
        m.products = m.users->products;
    } else {
        m.products = load_model(path);
    }
    return m;
}

/// Everything needed to build recommenders for one dataset.
struct Context {
    const AppConfig& cfg;
    Data data;
    LoadedModel model;
    std::shared_ptr<ClusterRecommender> clusters;
    std::shared_ptr<CoPurchaseModel> copurchase;
};

Context make_context(const AppConfig& cfg, const std::string& receipts, const std::string& cohorts,
                     const Artifacts& art, const std::string& method) {
    const bool needs_model = method == "topk" || method == "cluster" || method == "user";
    if (needs_model && art.model.empty()) throw Error("method '" + method + "' needs --model");
    Context ctx{cfg, {}, {}, nullptr, nullptr};
    if (!art.model.empty()) ctx.model = load_any_model(art.model);
    ctx.data = load_data(receipts, cohorts, cfg.corpus, art.model.empty() ? nullptr : &ctx.model.tokens());
    if (method == "cluster") {
        ClusterModel cm;
        TransitionMatrix tm;
        if (!art.clusters.empty()) {
            std::ifstream in(art.clusters);
            cm = read_clusters(in, ctx.model.tokens());
        } else {
            cm = kmeans_cosine(*ctx.model.products, std::min(cfg.cluster.clusters, ctx.model.tokens().size()),
                               cfg.cluster.max_iters, cfg.cluster.seed, cfg.cluster.workers);
        }
        if (!art.transitions.empty()) {
            std::ifstream in(art.transitions);
            tm = read_transitions(in);
        } else {
            tm = estimate_transitions(ctx.data.train, cm, cfg.cluster.flatten_seed);
        }
        ctx.clusters = std::make_shared<ClusterRecommender>(*ctx.model.products, std::move(cm), std::move(tm),
                                                            cfg.recommend.top_clusters);
    }
    if (method == "copurchase")
        ctx.copurchase = std::make_shared<CoPurchaseModel>(copurchase_train(ctx.data.train, cfg.cluster.flatten_seed));
    if (method == "user" && !ctx.model.users) throw Error("method 'user' needs a user2vec model");
    return ctx;
}

ProductRecommender product_base(const Context& ctx, const std::string& method) {
    if (method == "topk") {
        auto index = std::make_shared<CosineIndex>(*ctx.model.products);
        return [index](ProductId p, std::size_t k) {
            if (index->is_zero(p)) return std::vector<ScoredProduct>{};
            return topk_similar(*index, p, k);
        };
    }
    if (method == "cluster") {
        auto rec = ctx.clusters;
        return [rec](ProductId p, std::size_t k) {
            if (rec->index().is_zero(p)) return std::vector<ScoredProduct>{};
            return rec->recommend(p, k).items;
        };
    }
    if (method == "copurchase") {
        auto model = ctx.copurchase;
        return [model](ProductId p, std::size_t k) { return copurchase_recommend(*model, p, k); };
    }
    throw Error("method '" + method + "' is not a product-to-product recommender");
}

std::unique_ptr<Recommender> make_recommender(const Context& ctx, const std::string& method, double alpha) {
    if (method == "random") return std::make_unique<RandomRecommender>(ctx.data.train.vocab.size(), ctx.cfg.evaluate.seed);
    if (method == "popular") return std::make_unique<PopularityRecommender>();
    if (method == "user") return std::make_unique<UserVectorRecommender>(*ctx.model.users);
    return std::make_unique<DecayedRecommender>(method, product_base(ctx, method), ctx.data.train.vocab.size(), alpha,
                                                ctx.cfg.recommend.exclude_purchased, ctx.cfg.evaluate.k);
}

std::string source_text(const Source& s, const TokenTable& products, const TokenTable& users) {
    switch (s.kind) {
        case SourceKind::product: return products.token(s.id);
        case SourceKind::user: return "user:" + users.token(s.id);
        case SourceKind::cohort: return "cohort:" + to_string(s.cohort);
        case SourceKind::none: break;
    }
    return "-";
}

void print_items(const std::vector<ScoredProduct>& items, const TokenTable& products, const TokenTable& users) {
    for (std::size_t r = 0; r < items.size(); ++r)
        std::cout << r + 1 << '\t' << products.token(items[r].product) << '\t'
                  << detail::format_shortest(items[r].score) << '\t' << source_text(items[r].source, products, users)
                  << '\n';
}

std::vector<double> parse_grid(const std::string& s) {
    std::vector<double> out;
    for (auto part : detail::split(s, ',')) {
        double v = 0;
        if (!detail::parse_double(part, v)) throw Error("invalid grid value '" + std::string(part) + "'");
        out.push_back(v);
    }
    if (out.empty()) throw Error("empty grid");
    return out;
}

CohortDirectory cohort_directory(const ParsedLogs& parsed) {
    CohortDirectory dir;
    for (const auto& [user, key] : parsed.cohorts) dir[parsed.corpus.users.token(user)] = key;
    return dir;
}

/// Serves until SIGINT or SIGTERM. The signals are blocked in every thread
/// and collected by a dedicated waiter, which stops the server.
bool serve_until_signalled(HttpServer& server, const std::string& host, int port) {
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);
    std::atomic<bool> signalled{false};
    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        signalled = true;
        server.stop();
    });
    const bool ok = server.listen(host, port);
    if (!signalled) kill(getpid(), SIGTERM);
    waiter.join();
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Product embedding recommender toolkit"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; missing keys keep their defaults")->check(CLI::ExistingFile);

    AppConfig cfg;
    auto load = [&] {
        if (!config_path.empty()) cfg = load_config(config_path);
    };

    // config
    auto* config_cmd = app.add_subcommand("config", "Print the effective configuration with every default");

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic receipt corpus with planted structure");
    std::string gen_out;
    std::optional<std::size_t> gen_users, gen_products, gen_groups;
    std::optional<std::uint64_t> gen_seed;
    gen->add_option("--out-dir", gen_out, "Output directory")->required();
    gen->add_option("--users", gen_users, "Number of users");
    gen->add_option("--products", gen_products, "Number of products");
    gen->add_option("--groups", gen_groups, "Number of product groups");
    gen->add_option("--seed", gen_seed, "Generator seed");

    // train
    auto* train = app.add_subcommand("train", "Train prod2vec, bagged-prod2vec or user2vec embeddings");
    std::string tr_receipts, tr_out, tr_init, tr_method, tr_split;
    std::optional<std::size_t> tr_dim, tr_epochs, tr_workers;
    std::optional<std::uint64_t> tr_seed;
    train->add_option("--receipts", tr_receipts, "Receipt log")->required()->check(CLI::ExistingFile);
    train->add_option("--out", tr_out, "Model path (writes <out>, <out>.out, <out>.vocab)")->required();
    train->add_option("--method", tr_method, "prod2vec | bagged-prod2vec | user2vec");
    train->add_option("--split-date", tr_split, "Train only on receipts before this date (YYYY-MM-DD)");
    train->add_option("--init", tr_init, "Warm-start from an existing model over the same vocabulary");
    train->add_option("--dim", tr_dim, "Embedding dimension");
    train->add_option("--epochs", tr_epochs, "Training epochs");
    train->add_option("--workers", tr_workers, "Training threads");
    train->add_option("--seed", tr_seed, "Training seed");

    // cluster
    auto* cluster = app.add_subcommand("cluster", "Cluster product vectors and estimate cluster transitions");
    std::string cl_model, cl_receipts, cl_split, cl_out_clusters, cl_out_transitions;
    std::optional<std::size_t> cl_k;
    std::optional<std::uint64_t> cl_seed;
    cluster->add_option("--model", cl_model, "Product model")->required()->check(CLI::ExistingFile);
    cluster->add_option("--receipts", cl_receipts, "Receipt log for transition counts")->required()->check(CLI::ExistingFile);
    cluster->add_option("--split-date", cl_split, "Count transitions only before this date");
    cluster->add_option("--clusters", cl_k, "Number of clusters C");
    cluster->add_option("--seed", cl_seed, "k-means++ seed");
    cluster->add_option("--out-clusters", cl_out_clusters, "Cluster file")->required();
    cluster->add_option("--out-transitions", cl_out_transitions, "Transition file")->required();

    // recommend
    auto* rec = app.add_subcommand("recommend", "Recommend for a product or for a user on a date");
    std::string rc_method = "topk", rc_user, rc_product, rc_date, rc_receipts, rc_cohorts, rc_export;
    Artifacts rc_art;
    std::optional<std::size_t> rc_k, rc_top;
    std::optional<double> rc_alpha;
    rec->add_option("--model", rc_art.model, "Embedding model");
    rec->add_option("--method", rc_method, "topk | cluster | user | copurchase | popular")
        ->check(CLI::IsMember({"topk", "cluster", "user", "copurchase", "popular"}));
    rec->add_option("--k", rc_k, "Number of recommendations");
    rec->add_option("--alpha", rc_alpha, "Daily decay factor");
    rec->add_option("--top-clusters", rc_top, "Clusters considered by the cluster method");
    rec->add_option("--user", rc_user, "User token (daily recommendation)");
    rec->add_option("--product", rc_product, "Product token (product-to-product recommendation)");
    rec->add_option("--date", rc_date, "Recommendation date YYYY-MM-DD");
    rec->add_option("--receipts", rc_receipts, "Receipt log (histories, co-purchase and popularity counts)");
    rec->add_option("--cohorts", rc_cohorts, "Cohort file");
    rec->add_option("--clusters", rc_art.clusters, "Cluster file");
    rec->add_option("--transitions", rc_art.transitions, "Transition file");
    rec->add_option("--export-table", rc_export, "Write the product->predictions table for every product");

    // evaluate and sweep share their inputs
    struct EvalArgs {
        std::string receipts, cohorts, split, method = "cluster", out, json;
        Artifacts art;
        std::optional<std::size_t> k, workers;
        std::optional<double> alpha;
    };
    EvalArgs ev, sw;
    std::string sw_param, sw_values;
    auto add_eval_options = [](CLI::App* cmd, EvalArgs& a) {
        cmd->add_option("--receipts", a.receipts, "Receipt log")->required()->check(CLI::ExistingFile);
        cmd->add_option("--cohorts", a.cohorts, "Cohort file");
        cmd->add_option("--split-date", a.split, "First test day YYYY-MM-DD");
        cmd->add_option("--method", a.method, "random | popular | topk | cluster | copurchase | user")
            ->check(CLI::IsMember({"random", "popular", "topk", "cluster", "copurchase", "user"}));
        cmd->add_option("--model", a.art.model, "Embedding model");
        cmd->add_option("--clusters", a.art.clusters, "Cluster file");
        cmd->add_option("--transitions", a.art.transitions, "Transition file");
        cmd->add_option("--k", a.k, "Daily budget K");
        cmd->add_option("--alpha", a.alpha, "Daily decay factor");
        cmd->add_option("--workers", a.workers, "Evaluation threads");
        cmd->add_option("--out", a.out, "TSV output (stdout when omitted)");
    };
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Per-day accuracy over the held-out period");
    add_eval_options(evaluate_cmd, ev);
    evaluate_cmd->add_option("--json", ev.json, "JSON summary output");
    auto* sweep_cmd = app.add_subcommand("sweep", "Evaluate over a grid of alpha, lookback or refresh values");
    add_eval_options(sweep_cmd, sw);
    sweep_cmd->add_option("--param", sw_param, "alpha | lookback | refresh")->required();
    sweep_cmd->add_option("--values", sw_values, "Comma-separated grid")->required();

    // serve
    auto* serve = app.add_subcommand("serve", "Refresh the serving stores and answer HTTP requests");
    std::string sv_dir, sv_host, sv_method = "topk", sv_receipts, sv_cohorts, sv_profiles, sv_clock, sv_pop_date;
    std::string sv_vocab, sv_predictions;
    Artifacts sv_art;
    std::optional<int> sv_port;
    bool sv_refresh_only = false;
    bool sv_compact = false;
    serve->add_option("--data-dir", sv_dir, "Store directory");
    serve->add_option("--host", sv_host, "Bind address");
    serve->add_option("--port", sv_port, "Bind port");
    serve->add_option("--model", sv_art.model, "Refresh predictions from this model");
    serve->add_option("--method", sv_method, "Prediction method for --model: topk | cluster")
        ->check(CLI::IsMember({"topk", "cluster"}));
    serve->add_option("--clusters", sv_art.clusters, "Cluster file for --method cluster");
    serve->add_option("--transitions", sv_art.transitions, "Transition file for --method cluster");
    serve->add_option("--vocab", sv_vocab, "Vocabulary file for --predictions");
    serve->add_option("--predictions", sv_predictions, "Refresh predictions from an exported table");
    serve->add_option("--receipts", sv_receipts, "Receipt log for popularity refresh and transition counts");
    serve->add_option("--cohorts", sv_cohorts, "Cohort file for back-fill");
    serve->add_option("--popularity-date", sv_pop_date, "Compute popularity as of this date (default: day after the last receipt)");
    serve->add_option("--profiles", sv_profiles, "Import purchases from a receipt log into the profile store");
    serve->add_option("--clock-date", sv_clock, "Pin the store clock to this date instead of wall time");
    serve->add_flag("--compact", sv_compact, "Drop expired profile entries before serving");
    serve->add_flag("--refresh-only", sv_refresh_only, "Refresh the stores and exit");

    CLI11_PARSE(app, argc, argv);

    try {
        load();
        if (config_cmd->parsed()) {
            std::cout << dump_config(cfg);
            return 0;
        }

        if (gen->parsed()) {
            if (gen_users) cfg.gen.num_users = *gen_users;
            if (gen_products) cfg.gen.num_products = *gen_products;
            if (gen_groups) cfg.gen.num_groups = *gen_groups;
            if (gen_seed) cfg.gen.seed = *gen_seed;
            auto data = generate(cfg.gen);
            fs::path dir(gen_out);
            open_out(dir / "receipts.tsv") << data.receipts;
            open_out(dir / "cohorts.tsv") << data.cohorts;
            auto groups = open_out(dir / "groups.tsv");
            write_groups(data.truth, groups);
            auto matrix = open_out(dir / "group_transition.tsv");
            write_transition_matrix(data.truth.group_transition, matrix);
            std::cerr << "wrote " << cfg.gen.num_users << " users over " << cfg.gen.num_products << " products to "
                      << dir << '\n';
            return 0;
        }

        if (train->parsed()) {
            if (!tr_method.empty()) cfg.train.method = parse_train_method(tr_method);
            if (!tr_split.empty()) cfg.corpus.split_date = tr_split;
            if (tr_dim) cfg.train.params.dim = *tr_dim;
            if (tr_epochs) cfg.train.params.epochs = *tr_epochs;
            if (tr_workers) cfg.train.params.workers = *tr_workers;
            if (tr_seed) cfg.train.params.seed = *tr_seed;
            std::optional<EmbeddingModel> init;
            if (!tr_init.empty()) init = load_model(tr_init);
            auto data = load_data(tr_receipts, "", cfg.corpus, init ? &init->products : nullptr);
            if (fs::path(tr_out).has_parent_path()) fs::create_directories(fs::path(tr_out).parent_path());
            TrainOptions options;
            options.init = init ? &*init : nullptr;
            options.on_epoch = [](std::size_t epoch, const EmbeddingModel&) { std::cerr << "epoch " << epoch + 1 << " done\n"; };
            switch (cfg.train.method) {
                case TrainMethod::prod2vec: save_model(train_prod2vec(data.train, cfg.train.params, options), tr_out); break;
                case TrainMethod::bagged_prod2vec:
                    save_model(train_bagged_prod2vec(data.train, cfg.train.params, options), tr_out);
                    break;
                case TrainMethod::user2vec: save_user_model(train_user2vec(data.train, cfg.train.params, options), tr_out); break;
            }
            auto vocab = open_out(tr_out + ".vocab");
            write_vocabulary(data.train.vocab, vocab);
            return 0;
        }

        if (cluster->parsed()) {
            if (!cl_split.empty()) cfg.corpus.split_date = cl_split;
            if (cl_k) cfg.cluster.clusters = *cl_k;
            if (cl_seed) cfg.cluster.seed = *cl_seed;
            auto model = load_any_model(cl_model);
            auto data = load_data(cl_receipts, "", cfg.corpus, &model.tokens());
            auto cm = kmeans_cosine(*model.products, cfg.cluster.clusters, cfg.cluster.max_iters, cfg.cluster.seed,
                                    cfg.cluster.workers);
            auto tm = estimate_transitions(data.train, cm, cfg.cluster.flatten_seed);
            auto cout_ = open_out(cl_out_clusters);
            write_clusters(model.tokens(), cm, cout_);
            auto tout = open_out(cl_out_transitions);
            write_transitions(tm, tout);
            std::cerr << "k-means converged after " << cm.objective_trace.size() << " iterations\n";
            return 0;
        }

        if (rec->parsed()) {
            if (rc_k) cfg.recommend.k = *rc_k;
            if (rc_alpha) cfg.recommend.alpha = *rc_alpha;
            if (rc_top) cfg.recommend.top_clusters = *rc_top;
            cfg.evaluate.k = cfg.recommend.k;
            if (rc_receipts.empty() && rc_method != "topk" && rc_method != "user" &&
                !(rc_method == "cluster" && !rc_art.transitions.empty()))
                throw Error("method '" + rc_method + "' needs --receipts");
            Context ctx = rc_receipts.empty()
                              ? Context{cfg, {}, load_any_model(rc_art.model), nullptr, nullptr}
                              : make_context(cfg, rc_receipts, rc_cohorts, rc_art, rc_method);
            if (rc_receipts.empty()) {
                ctx.data.train.vocab = vocabulary_of(ctx.model.tokens());
                if (rc_method == "cluster") {
                    std::ifstream cin_(rc_art.clusters);
                    std::ifstream tin(rc_art.transitions);
                    ctx.clusters = std::make_shared<ClusterRecommender>(
                        *ctx.model.products, read_clusters(cin_, ctx.model.tokens()), read_transitions(tin),
                        cfg.recommend.top_clusters);
                }
            }
            const TokenTable& products = ctx.data.train.vocab.products;
            const TokenTable& users = ctx.data.parsed.corpus.users;

            if (!rc_export.empty()) {
                auto table = build_prediction_table(products.size(), product_base(ctx, rc_method), cfg.recommend.fanout);
                auto out = open_out(rc_export);
                write_prediction_table(table, products, out);
                auto vout = open_out(rc_export + ".vocab");
                write_vocabulary(vocabulary_of(products), vout);
                return 0;
            }
            if (!rc_product.empty()) {
                auto p = products.find(rc_product);
                if (!p) throw UnknownKeyError("unknown product '" + rc_product + "'");
                print_items(product_base(ctx, rc_method)(*p, cfg.recommend.k), products, users);
                return 0;
            }
            if (rc_user.empty() || rc_date.empty()) throw Error("give --product, or --user with --date, or --export-table");
            if (rc_receipts.empty()) throw Error("daily user recommendations need --receipts");
            const Day day = parse_date(rc_date);
            auto u = users.find(rc_user);
            if (!u) throw UnknownKeyError("unknown user '" + rc_user + "'");
            Corpus all = merge(ctx.data.train, ctx.data.test);
            std::vector<Purchase> history;
            if (const auto* log = all.find(*u))
                for (const auto& r : log->receipts)
                    if (r.timestamp < day_start(day))
                        for (auto p : r.products) history.push_back({p, r.timestamp});
            auto popularity = popular_train(all, ctx.data.parsed.cohorts, day, cfg.evaluate.lookback_days,
                                            cfg.evaluate.popularity_list_size);
            RecommendRequest request{*u, history, day, cohort_of(ctx.data.parsed.cohorts, *u), &popularity,
                                     cfg.recommend.k};
            auto recommender = make_recommender(ctx, rc_method == "popular" ? "popular" : rc_method, cfg.recommend.alpha);
            auto items = recommender->recommend(request);
            if (items.empty()) items = popular_recommend(popularity, request.cohort, cfg.recommend.k);
            print_items(items, products, users);
            return 0;
        }

        if (evaluate_cmd->parsed() || sweep_cmd->parsed()) {
            EvalArgs& a = evaluate_cmd->parsed() ? ev : sw;
            if (!a.split.empty()) cfg.corpus.split_date = a.split;
            if (cfg.corpus.split_date.empty()) throw Error("evaluation needs --split-date or corpus.split_date");
            if (a.k) cfg.evaluate.k = *a.k;
            if (a.alpha) cfg.evaluate.alpha = *a.alpha;
            if (a.workers) cfg.evaluate.workers = *a.workers;
            cfg.evaluate.validate();
            Context ctx = make_context(cfg, a.receipts, a.cohorts, a.art, a.method);
            std::ofstream file;
            if (!a.out.empty()) file = open_out(a.out);
            std::ostream& out = a.out.empty() ? std::cout : file;
            if (evaluate_cmd->parsed()) {
                auto recommender = make_recommender(ctx, a.method, cfg.evaluate.alpha);
                auto report = evaluate(*recommender, ctx.data.train, ctx.data.test, ctx.data.parsed.cohorts, cfg.evaluate);
                write_report_tsv(report, out);
                if (!a.json.empty()) open_out(a.json) << report_json(report) << '\n';
                std::cerr << report.recommender << ": accuracy " << report.overall.accuracy() << " over "
                          << report.overall.total << " purchases, back-fill " << report.backfill_fraction() << '\n';
            } else {
                auto param = parse_sweep_parameter(sw_param);
                RecommenderFactory factory = [&](const EvalConfig& c) { return make_recommender(ctx, a.method, c.alpha); };
                auto points = sweep(factory, param, parse_grid(sw_values), ctx.data.train, ctx.data.test,
                                    ctx.data.parsed.cohorts, cfg.evaluate);
                write_sweep_tsv(param, points, cfg.evaluate, out);
            }
            return 0;
        }

        if (serve->parsed()) {
            if (!sv_dir.empty()) cfg.serve.data_dir = sv_dir;
            if (!sv_host.empty()) cfg.serve.host = sv_host;
            if (sv_port) cfg.serve.port = *sv_port;
            const fs::path dir(cfg.serve.data_dir);
            std::shared_ptr<StoreClock> clock;
            if (sv_clock.empty()) clock = std::make_shared<SystemClock>();
            else clock = std::make_shared<ManualClock>(day_start(parse_date(sv_clock)));
            ProfileStore profiles(clock, {cfg.serve.ttl_days, dir / "profiles"});
            ModelStore models(dir, cfg.recommend.fanout);

            std::optional<Data> data;
            if (!sv_receipts.empty()) data = load_data(sv_receipts, sv_cohorts, cfg.corpus);
            if (!sv_predictions.empty()) {
                if (sv_vocab.empty()) throw Error("--predictions needs --vocab");
                std::cerr << "predictions v" << models.refresh_predictions_from_files(sv_vocab, sv_predictions) << '\n';
            } else if (!sv_art.model.empty()) {
                if (sv_method == "cluster" && sv_receipts.empty() && sv_art.transitions.empty())
                    throw Error("cluster predictions need --receipts or --transitions");
                Context ctx = sv_receipts.empty() ? Context{cfg, {}, load_any_model(sv_art.model), nullptr, nullptr}
                                                  : make_context(cfg, sv_receipts, sv_cohorts, sv_art, sv_method);
                if (sv_receipts.empty() && sv_method == "cluster") {
                    std::ifstream cin_(sv_art.clusters);
                    std::ifstream tin(sv_art.transitions);
                    ctx.clusters = std::make_shared<ClusterRecommender>(*ctx.model.products,
                                                                        read_clusters(cin_, ctx.model.tokens()),
                                                                        read_transitions(tin), cfg.recommend.top_clusters);
                }
                auto table = build_prediction_table(ctx.model.tokens().size(), product_base(ctx, sv_method),
                                                    cfg.recommend.fanout);
                std::cerr << "predictions v" << models.refresh_predictions(ctx.model.tokens(), std::move(table)) << '\n';
            }
            if (data) {
                Corpus all = merge(data->train, data->test);
                Day at = 0;
                if (!sv_pop_date.empty()) {
                    at = parse_date(sv_pop_date);
                } else {
                    for (const auto& log : all.logs)
                        for (const auto& r : log.receipts) at = std::max(at, day_of(r.timestamp) + 1);
                }
                std::cerr << "popularity v"
                          << models.refresh_popularity(all, data->parsed.cohorts, at, cfg.serve.popularity_lookback_days,
                                                       cfg.serve.popularity_list_size)
                          << '\n';
            }
            if (!sv_profiles.empty()) {
                auto parsed = parse_logs(read_file(sv_profiles));
                for (const auto& log : parsed.corpus.logs) {
                    std::vector<ProfileEntry> entries;
                    for (const auto& r : log.receipts)
                        for (auto p : r.products) entries.push_back({parsed.corpus.vocab.products.token(p), r.timestamp});
                    profiles.put(parsed.corpus.users.token(log.user), entries);
                }
                std::cerr << "imported " << parsed.corpus.logs.size() << " profiles\n";
            }
            if (sv_compact) std::cerr << "compaction removed " << profiles.compact() << " entries\n";
            if (sv_refresh_only) return 0;

            CohortDirectory cohorts;
            if (data) cohorts = cohort_directory(data->parsed);
            else if (!sv_cohorts.empty()) cohorts = cohort_directory(parse_logs("", read_file(sv_cohorts)));
            ServiceConfig service = cfg.serve.service;
            RecommendationService endpoint(profiles, models, std::move(cohorts), service);
            HttpServer server(endpoint);
            std::cerr << "listening on " << cfg.serve.host << ':' << cfg.serve.port << '\n';
            if (!serve_until_signalled(server, cfg.serve.host, cfg.serve.port))
                throw Error("cannot bind " + cfg.serve.host + ":" + std::to_string(cfg.serve.port));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
