#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <memory>

#include "prodrec/config.hpp"
#include "prodrec/eval.hpp"

namespace py = pybind11;
using namespace prodrec;

namespace {

struct PyCorpus {
    ParsedLogs parsed;
};

struct PyModel {
    EmbeddingModel model;
    std::shared_ptr<CosineIndex> index;

    explicit PyModel(EmbeddingModel m) : model(std::move(m)), index(std::make_shared<CosineIndex>(model)) {}
};

/// Training corpus restricted by the configured count and price filters.
Corpus filtered(const Corpus& raw, const CorpusConfig& cfg) {
    return apply_vocabulary(raw, build_vocabulary(raw, cfg.min_count, cfg.min_price));
}

PyModel train(const PyCorpus& corpus, const std::string& method, const std::string& config_json) {
    auto cfg = parse_config(config_json);
    auto data = filtered(corpus.parsed.corpus, cfg.corpus);
    py::gil_scoped_release release;
    switch (parse_train_method(method)) {
        case TrainMethod::prod2vec: return PyModel(train_prod2vec(data, cfg.train.params));
        case TrainMethod::bagged_prod2vec: return PyModel(train_bagged_prod2vec(data, cfg.train.params));
        case TrainMethod::user2vec: return PyModel(train_user2vec(data, cfg.train.params).products);
    }
    throw Error("unknown training method");
}

std::vector<std::pair<std::string, double>> most_similar(const PyModel& m, const std::string& token, std::size_t k) {
    auto id = m.model.products.find(token);
    if (!id) throw UnknownKeyError("unknown product '" + token + "'");
    std::vector<std::pair<std::string, double>> out;
    for (const auto& item : topk_similar(*m.index, *id, k)) out.emplace_back(m.model.products.token(item.product), item.score);
    return out;
}

py::array_t<float> vectors(const PyModel& m) {
    py::array_t<float> out({m.model.size(), m.model.dim()});
    auto view = out.mutable_unchecked<2>();
    for (std::size_t i = 0; i < m.model.size(); ++i)
        for (std::size_t d = 0; d < m.model.dim(); ++d) view(i, d) = m.model.input(i, d);
    return out;
}

std::map<std::string, std::uint32_t> cluster(const PyModel& m, std::size_t clusters, std::uint64_t seed,
                                             std::size_t max_iters) {
    auto cm = kmeans_cosine(m.model, clusters, max_iters, seed);
    std::map<std::string, std::uint32_t> out;
    for (std::size_t p = 0; p < m.model.size(); ++p) out[m.model.products.token(static_cast<ProductId>(p))] = cm.assignment[p];
    return out;
}

std::string evaluate_method(const PyCorpus& corpus, const std::string& split_date, const std::string& method,
                            const PyModel* model, const std::string& config_json) {
    auto cfg = parse_config(config_json);
    const Timestamp cutoff = day_start(parse_date(split_date));
    Corpus train;
    Corpus test;
    if (model) {
        Vocabulary vocab;
        vocab.products = model->model.products;
        vocab.counts.assign(vocab.products.size(), 0);
        vocab.median_prices.assign(vocab.products.size(), 0.0);
        vocab.min_count = 0;
        auto halves = split_by_time(corpus.parsed.corpus, cutoff);
        train = apply_vocabulary(halves.train, vocab);
        test = apply_vocabulary(halves.test, vocab);
    } else {
        auto halves = split_with_train_vocabulary(corpus.parsed.corpus, cutoff, cfg.corpus.min_count, cfg.corpus.min_price);
        train = std::move(halves.train);
        test = std::move(halves.test);
    }

    std::unique_ptr<Recommender> rec;
    std::shared_ptr<ClusterRecommender> clusters;
    if (method == "random") {
        rec = std::make_unique<RandomRecommender>(train.vocab.size(), cfg.evaluate.seed);
    } else if (method == "popular") {
        rec = std::make_unique<PopularityRecommender>();
    } else if (method == "topk" || method == "cluster") {
        if (!model) throw Error("method '" + method + "' needs a model");
        ProductRecommender base;
        if (method == "topk") {
            auto index = model->index;
            base = [index](ProductId p, std::size_t k) {
                if (index->is_zero(p)) return std::vector<ScoredProduct>{};
                return topk_similar(*index, p, k);
            };
        } else {
            auto cm = kmeans_cosine(model->model, std::min(cfg.cluster.clusters, model->model.size()),
                                    cfg.cluster.max_iters, cfg.cluster.seed, cfg.cluster.workers);
            auto tm = estimate_transitions(train, cm, cfg.cluster.flatten_seed);
            clusters = std::make_shared<ClusterRecommender>(model->model, std::move(cm), std::move(tm),
                                                            cfg.recommend.top_clusters);
            base = [clusters](ProductId p, std::size_t k) {
                if (clusters->index().is_zero(p)) return std::vector<ScoredProduct>{};
                return clusters->recommend(p, k).items;
            };
        }
        rec = std::make_unique<DecayedRecommender>(method, base, train.vocab.size(), cfg.evaluate.alpha,
                                                   cfg.recommend.exclude_purchased, cfg.evaluate.k);
    } else {
        throw Error("unknown method '" + method + "' (expected random, popular, topk or cluster)");
    }
    EvalReport report;
    {
        py::gil_scoped_release release;
        report = evaluate(*rec, train, test, corpus.parsed.cohorts, cfg.evaluate);
    }
    return report_json(report);
}

}  // namespace

PYBIND11_MODULE(_prodrec, m) {
    m.doc() = "Product embedding recommender core";

    py::register_exception<Error>(m, "Error", PyExc_ValueError);

    m.def("default_config", [] { return dump_config(AppConfig{}); }, "Every setting with its default, as JSON text.");
    m.def("validate_config", [](const std::string& json) { return dump_config(parse_config(json)); },
          py::arg("config_json"), "Effective configuration after overlaying `config_json` on the defaults.");

    m.def(
        "generate",
        [](const std::string& config_json) {
            auto data = generate(parse_config(config_json).gen);
            return py::make_tuple(data.receipts, data.cohorts);
        },
        py::arg("config_json") = "{}", "Synthetic (receipts, cohorts) text for the `gen` section.");

    py::class_<PyCorpus>(m, "Corpus")
        .def(py::init([](const std::string& receipts, const std::string& cohorts) {
                 return PyCorpus{parse_logs(receipts, cohorts)};
             }),
             py::arg("receipts"), py::arg("cohorts") = "")
        .def_property_readonly("num_users", [](const PyCorpus& c) { return c.parsed.corpus.logs.size(); })
        .def_property_readonly("num_receipts", [](const PyCorpus& c) { return c.parsed.corpus.num_receipts(); })
        .def_property_readonly("num_purchases", [](const PyCorpus& c) { return c.parsed.corpus.num_purchases(); })
        .def_property_readonly("products", [](const PyCorpus& c) { return c.parsed.corpus.vocab.products.tokens(); });

    py::class_<PyModel>(m, "Model")
        .def_static("train", &train, py::arg("corpus"), py::arg("method") = "bagged-prod2vec",
                    py::arg("config_json") = "{}")
        .def_static("load", [](const std::string& path) { return PyModel(load_model(path)); }, py::arg("path"))
        .def("save", [](const PyModel& m, const std::string& path) { save_model(m.model, path); }, py::arg("path"))
        .def_property_readonly("products", [](const PyModel& m) { return m.model.products.tokens(); })
        .def_property_readonly("dim", [](const PyModel& m) { return m.model.dim(); })
        .def("vectors", &vectors, "Input vectors as a (products, dim) float32 array.")
        .def("most_similar", &most_similar, py::arg("product"), py::arg("k") = 10);

    m.def("cluster", &cluster, py::arg("model"), py::arg("clusters"), py::arg("seed") = 1, py::arg("max_iters") = 100,
          "Spherical k-means assignment of every product.");
    m.def("evaluate", &evaluate_method, py::arg("corpus"), py::arg("split_date"), py::arg("method"),
          py::arg("model") = nullptr, py::arg("config_json") = "{}", "Evaluation report as JSON text.");
}
