#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <iostream>
#include <sstream>

#include "plip/cli.hpp"
#include "plip/evaluation.hpp"
#include "plip/synthetic.hpp"

namespace py = pybind11;
using namespace plip;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor from_numpy(const Array& a) {
    Shape shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

std::string to_jsonl(const std::vector<data::PersonRecord>& recs) {
    std::string s;
    for (const auto& r : recs) s += data::manifest_line(r) + "\n";
    return s;
}

struct PyPlip {
    train::LoadedPlip loaded;

    Array embed_images(const Array& images) const { return to_numpy(loaded.model->embed_images(from_numpy(images))); }
    Array embed_texts(const std::vector<std::string>& texts) const {
        std::vector<data::TokenSequence> seqs;
        const auto n = static_cast<std::size_t>(loaded.model->config().encoder.max_caption_len);
        for (const auto& t : texts) seqs.push_back(loaded.vocab.encode_framed(t, n));
        return to_numpy(loaded.model->embed_texts(seqs));
    }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "PLIP lab core";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<DataError>(m, "DataError", PyExc_ValueError);

    m.def(
        "cmpm_loss",
        [](const Array& v, const Array& t, const std::vector<std::int64_t>& ids, double epsilon, bool symmetric) {
            ag::NoGradGuard g;
            return pt::cmpm_loss(ag::constant(from_numpy(v)), ag::constant(from_numpy(t)), ids, {epsilon, symmetric, true})
                .item();
        },
        py::arg("visual"), py::arg("textual"), py::arg("ids") = std::vector<std::int64_t>{}, py::arg("epsilon") = 1e-8,
        py::arg("symmetric") = true);
    m.def(
        "vap_loss",
        [](const Array& logits, const std::vector<std::int64_t>& targets) {
            ag::NoGradGuard g;
            return pt::vap_loss_from_logits(ag::constant(from_numpy(logits)), targets).item();
        },
        py::arg("logits"), py::arg("targets"));
    m.def(
        "sic_loss",
        [](const Array& pred, const Array& target) {
            ag::NoGradGuard g;
            return pt::sic_loss_from_prediction(ag::constant(from_numpy(pred)), from_numpy(target)).item();
        },
        py::arg("prediction"), py::arg("target"));

    m.def("cosine_similarity", [](const Array& q, const Array& g) {
        return to_numpy(eval::cosine_similarity(from_numpy(q), from_numpy(g)));
    });
    m.def(
        "rank_at_k",
        [](const Array& sim, const std::vector<std::int64_t>& q, const std::vector<std::int64_t>& g, std::int64_t k) {
            return eval::rank_at_k(from_numpy(sim), q, g, k);
        },
        py::arg("sim"), py::arg("query_ids"), py::arg("gallery_ids"), py::arg("k"));
    m.def(
        "mean_ap",
        [](const Array& sim, const std::vector<std::int64_t>& q, const std::vector<std::int64_t>& g) {
            return eval::mean_ap(from_numpy(sim), q, g);
        },
        py::arg("sim"), py::arg("query_ids"), py::arg("gallery_ids"));

    m.def(
        "lr_at_epoch",
        [](double base_lr, const std::vector<std::int64_t>& milestones, double decay, std::int64_t epoch) {
            train::TrainConfig c;
            c.base_lr = base_lr;
            c.milestones = milestones;
            c.decay = decay;
            return train::lr_at_epoch(c, epoch);
        },
        py::arg("base_lr"), py::arg("milestones"), py::arg("decay"), py::arg("epoch"));

    m.def(
        "synth_manifest_jsonl",
        [](std::int64_t ids, std::int64_t per_id, std::uint64_t seed) { return to_jsonl(data::synth_manifest(ids, per_id, seed)); },
        py::arg("n_identities"), py::arg("imgs_per_id"), py::arg("seed"));
    m.def(
        "few_shot_split_jsonl",
        [](const std::string& jsonl, double percent, std::uint64_t seed) {
            return to_jsonl(eval::few_shot_split(data::parse_manifest(jsonl), percent, seed));
        },
        py::arg("jsonl"), py::arg("percent"), py::arg("seed"));
    m.def("render_synthetic", [](const std::string& uri) { return to_numpy(data::render_synthetic_uri(uri)); });
    m.def("tokenize", [](const std::string& text) {
        std::vector<std::string> out;
        for (auto& t : data::tokenize(text)) out.push_back(std::move(t.text));
        return out;
    });

    py::class_<PyPlip>(m, "PlipModel")
        .def_static("load", [](const std::string& path) { return PyPlip{train::load_plip(path)}; })
        .def("embed_images", &PyPlip::embed_images, py::arg("images"))
        .def("embed_texts", &PyPlip::embed_texts, py::arg("texts"))
        .def("backbone_hash", [](const PyPlip& p) { return p.loaded.model->backbone_hash(); })
        .def_property_readonly("vocab_size", [](const PyPlip& p) { return p.loaded.vocab.size(); })
        .def_property_readonly("step", [](const PyPlip& p) { return p.loaded.step; })
        .def_property_readonly("config_text", [](const PyPlip& p) { return p.loaded.model->config().canonical(); });

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<std::string> full{"plip"};
            full.insert(full.end(), args.begin(), args.end());
            std::ostringstream out, err;
            int code;
            {
                py::gil_scoped_release release;
                code = cli::dispatch(full, out, err);
            }
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"));
}
