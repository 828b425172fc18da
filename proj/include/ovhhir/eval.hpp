#pragma once

#include "ovhhir/corpus.hpp"
#include "ovhhir/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace ovhhir {

// Frozen sentence embedding used for the cosine metric and the classifier
// fallback. Implementations must be deterministic and emit unit-norm vectors
// (the all-zero vector is reserved for empty text).
class SentenceEmbedder {
  public:
    virtual ~SentenceEmbedder() = default;
    virtual int64_t dim() const = 0;
    virtual Tensor embed(const std::string & text) const = 0;
};

// Stand-in encoder: every word hashes to a fixed gaussian direction and a
// sentence is the unit-normalized mean of its word vectors.
class HashedEmbedder final : public SentenceEmbedder {
  public:
    explicit HashedEmbedder(int64_t dim = 64, uint64_t seed = 17);
    int64_t dim() const override { return dim_; }
    Tensor embed(const std::string & text) const override;

  private:
    int64_t dim_;
    Rng root_;
};

// Cosine of the two sentence embeddings. Empty text on either side scores 0
// and sets *warned instead of raising, so batch evaluation never aborts.
double caption_similarity(const std::string & a, const std::string & b,
                          const SentenceEmbedder & emb, bool * warned = nullptr);

// The classification side of the protocol: a prompt built from the caption
// and the class list goes to a text model whose reply is scanned for class
// names.
struct ClassifierPromptSpec {
    std::string template_text =
        "Q: A video was described as: \"{caption}\" Pick exactly one interaction class "
        "from this list and answer with the class name only: {classes}.";
    std::string render(const std::string & caption,
                       const std::vector<std::string> & classes) const;
};

class ClassifierLM {
  public:
    virtual ~ClassifierLM() = default;
    virtual std::string answer(const std::string & prompt) const = 0;
};

// Desk-scale default: replies with the quoted caption from the prompt, i.e.
// the model's own description is taken as the classification answer.
class QuoteEchoLM final : public ClassifierLM {
  public:
    std::string answer(const std::string & prompt) const override;
};

// Scans text for contiguous class-name token sequences; returns the indices
// of the distinct classes present.
std::vector<int64_t> scan_class_names(const std::string & text,
                                      const std::vector<std::string> & classes);

// Prompt the classifier model, parse its reply for a unique class name, and
// fall back to nearest canonical caption by embedding similarity when the
// scan is ambiguous or empty. Always returns a valid index.
int64_t classify_caption(const std::string & caption, const std::vector<std::string> & classes,
                         const std::vector<std::string> & canonical_captions,
                         const ClassifierPromptSpec & spec, const ClassifierLM & lm,
                         const SentenceEmbedder & emb, bool * used_fallback = nullptr);

struct ClassScore {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int64_t support = 0;   // truth count
    int64_t predicted = 0; // prediction count
    bool zero_flag = false; // no truths and no predictions
};

struct F1Report {
    double macro_f1 = 0.0;
    std::vector<ClassScore> per_class;
};

F1Report macro_f1(const std::vector<int64_t> & predictions, const std::vector<int64_t> & truths,
                  int64_t num_classes);

// One scored record: the model's caption, the reference caption, and the
// ground-truth class index in the vocabulary being evaluated.
struct EvalItem {
    std::string id;
    std::string generated;
    std::string reference;
    int64_t truth = 0;
};

struct EvalReport {
    int64_t sample_count = 0;
    double cosine_mean = 0.0;
    double cosine_std = 0.0; // population std
    double macro_f1 = 0.0;
    std::vector<ClassScore> per_class; // covers every class of the vocabulary
    std::vector<std::string> class_names;
    std::vector<std::string> unseen_classes; // open-set runs only
    int64_t fallback_count = 0;
    int64_t warning_count = 0;

    std::string to_json() const;
    std::string to_table() const;
};

// Closed-vocabulary protocol: cosine against references plus N-way
// classification macro-F1 over `classes`.
EvalReport score_captions(const std::vector<EvalItem> & items,
                          const std::vector<std::string> & classes,
                          const std::vector<std::string> & canonical_captions,
                          const ClassifierPromptSpec & spec, const ClassifierLM & lm,
                          const SentenceEmbedder & emb);

// Open-set protocol: truths name classes absent from training. Classification
// runs over seen + unseen; macro-F1 averages over the unseen classes. With
// `restrict_to_seen` the classifier is confined to the training vocabulary
// (the closed-vocabulary stub, which cannot score above zero here).
struct OpenSetItem {
    std::string id;
    std::string generated;
    std::string reference;
    std::string truth_class; // unseen class name
};

EvalReport open_set_eval(const std::vector<OpenSetItem> & items,
                         const std::vector<std::string> & seen_classes,
                         const std::vector<std::string> & unseen_classes,
                         const std::map<std::string, std::string> & canonical_captions,
                         const ClassifierPromptSpec & spec, const ClassifierLM & lm,
                         const SentenceEmbedder & emb, bool restrict_to_seen = false);

} // namespace ovhhir
