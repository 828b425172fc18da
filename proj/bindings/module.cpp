#include "ovhhir/cli.hpp"
#include "ovhhir/eval.hpp"
#include "ovhhir/fusion_lm.hpp"
#include "ovhhir/video.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>
#include <string>
#include <vector>

namespace py = pybind11;
using namespace ovhhir;

PYBIND11_MODULE(_core, m) {
    m.doc() = "open-vocabulary human interaction recognition at desk scale";

    py::register_exception<usage_error>(m, "UsageError", PyExc_ValueError);
    py::register_exception<data_error>(m, "DataError", PyExc_ValueError);
    py::register_exception<config_error>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<numeric_error>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "run",
        [](const std::vector<std::string> & args) {
            std::vector<const char *> argv;
            argv.push_back("ovhhir");
            for (const auto & a : args) argv.push_back(a.c_str());
            std::ostringstream out, err;
            int code = run_cli(int(argv.size()), argv.data(), out, err);
            return py::make_tuple(code, out.str(), err.str());
        },
        py::arg("args"),
        "Run one cli invocation in-process; returns (exit_code, stdout, stderr).");

    m.def("sample_frames", &sample_frames, py::arg("total"), py::arg("k") = 16,
          "Uniform deterministic frame sampling: index i = floor(i*total/k).");

    m.def(
        "caption_similarity",
        [](const std::string & a, const std::string & b) {
            HashedEmbedder emb;
            return caption_similarity(a, b, emb);
        },
        py::arg("a"), py::arg("b"),
        "Cosine of the hashed sentence embeddings; empty text scores 0.");

    m.def(
        "macro_f1",
        [](const std::vector<int64_t> & predictions, const std::vector<int64_t> & truths,
           int64_t num_classes) {
            F1Report rep = macro_f1(predictions, truths, num_classes);
            py::list per_class;
            for (const auto & c : rep.per_class) {
                py::dict d;
                d["precision"] = c.precision;
                d["recall"] = c.recall;
                d["f1"] = c.f1;
                d["support"] = c.support;
                d["predicted"] = c.predicted;
                d["zero_flag"] = c.zero_flag;
                per_class.append(d);
            }
            py::dict out;
            out["macro_f1"] = rep.macro_f1;
            out["per_class"] = per_class;
            return out;
        },
        py::arg("predictions"), py::arg("truths"), py::arg("num_classes"),
        "Unweighted mean of per-class F1 over all classes of the vocabulary.");

    m.def(
        "generate",
        [](const std::filesystem::path & checkpoint, const std::filesystem::path & tokenizer,
           const std::filesystem::path & clip, const std::filesystem::path & masks,
           const std::string & prompt, int64_t max_new_tokens, int64_t top_k, double temperature,
           uint64_t seed) {
            GenerateOptions opt;
            opt.checkpoint = checkpoint;
            opt.tokenizer = tokenizer;
            opt.clip = clip;
            opt.masks = masks;
            opt.prompt = prompt;
            opt.max_new_tokens = max_new_tokens;
            opt.top_k = top_k;
            opt.temperature = temperature;
            opt.seed = seed;
            std::ostringstream out;
            cmd_generate(opt, out);
            std::string caption = out.str();
            if (!caption.empty() && caption.back() == '\n') caption.pop_back();
            return caption;
        },
        py::arg("checkpoint"), py::arg("tokenizer"), py::arg("clip"),
        py::arg("masks") = std::filesystem::path(), py::arg("prompt") = std::string(),
        py::arg("max_new_tokens") = 24, py::arg("top_k") = 0, py::arg("temperature") = 1.0,
        py::arg("seed") = 0,
        "Caption one clip with a trained checkpoint (greedy unless top_k > 0).");

    py::class_<Tokenizer>(m, "Tokenizer", "Word-level tokenizer with PAD/BOS/EOS/UNK specials.")
        .def_static("build", &Tokenizer::build, py::arg("texts"))
        .def_static("load", &Tokenizer::load, py::arg("path"))
        .def("save", &Tokenizer::save, py::arg("path"))
        .def("encode", &Tokenizer::encode, py::arg("text"))
        .def("decode", &Tokenizer::decode, py::arg("ids"))
        .def("__len__", [](const Tokenizer & t) { return t.size(); });
}
