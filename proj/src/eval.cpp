#include "ovhhir/eval.hpp"

#include "ovhhir/fusion_lm.hpp"

#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>

namespace ovhhir {

using nlohmann::json;

namespace {

bool has_alnum(const std::string & w) {
    for (char c : w)
        if (std::isalnum(static_cast<unsigned char>(c))) return true;
    return false;
}

double vec_norm(const Tensor & v) {
    double sq = 0.0;
    for (double x : v.data) sq += x * x;
    return std::sqrt(sq);
}

std::string fmt(const char * pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

} // namespace

HashedEmbedder::HashedEmbedder(int64_t dim, uint64_t seed) : dim_(dim), root_(seed) {
    if (dim < 1) throw config_error("embedder dim must be >= 1");
}

Tensor HashedEmbedder::embed(const std::string & text) const {
    std::vector<std::string> words;
    for (auto & w : Tokenizer::split_tokens(text))
        if (has_alnum(w)) words.push_back(std::move(w));
    Tensor out({dim_});
    if (words.empty()) return out;
    for (const auto & w : words) {
        Rng r = root_.fork(w);
        for (int64_t i = 0; i < dim_; ++i) out.data[size_t(i)] += r.gaussian();
    }
    for (double & x : out.data) x /= double(words.size());
    double n = vec_norm(out);
    if (n < 1e-12) return Tensor({dim_});
    for (double & x : out.data) x /= n;
    return out;
}

double caption_similarity(const std::string & a, const std::string & b,
                          const SentenceEmbedder & emb, bool * warned) {
    Tensor ea = emb.embed(a);
    Tensor eb = emb.embed(b);
    if (vec_norm(ea) == 0.0 || vec_norm(eb) == 0.0) {
        if (warned) *warned = true;
        return 0.0;
    }
    if (ea.numel() != eb.numel()) throw config_error("embedder returned mixed widths");
    double dot = 0.0;
    for (size_t i = 0; i < ea.data.size(); ++i) dot += ea.data[i] * eb.data[i];
    return std::clamp(dot, -1.0, 1.0);
}

std::string ClassifierPromptSpec::render(const std::string & caption,
                                         const std::vector<std::string> & classes) const {
    std::string list;
    for (const auto & c : classes) list += (list.empty() ? "" : ", ") + c;
    std::string out = template_text;
    auto replace_all = [&out](const std::string & key, const std::string & value) {
        for (size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos)) {
            out.replace(pos, key.size(), value);
            pos += value.size();
        }
    };
    replace_all("{caption}", caption);
    replace_all("{classes}", list);
    return out;
}

std::string QuoteEchoLM::answer(const std::string & prompt) const {
    size_t open = prompt.find('"');
    if (open == std::string::npos) return prompt;
    size_t close = prompt.find('"', open + 1);
    if (close == std::string::npos) return prompt;
    return prompt.substr(open + 1, close - open - 1);
}

std::vector<int64_t> scan_class_names(const std::string & text,
                                      const std::vector<std::string> & classes) {
    auto words = Tokenizer::split_tokens(text);
    std::vector<int64_t> found;
    for (size_t ci = 0; ci < classes.size(); ++ci) {
        auto name = Tokenizer::split_tokens(classes[ci]);
        if (name.empty() || name.size() > words.size()) continue;
        for (size_t i = 0; i + name.size() <= words.size(); ++i) {
            if (std::equal(name.begin(), name.end(), words.begin() + int64_t(i))) {
                found.push_back(int64_t(ci));
                break;
            }
        }
    }
    return found;
}

int64_t classify_caption(const std::string & caption, const std::vector<std::string> & classes,
                         const std::vector<std::string> & canonical_captions,
                         const ClassifierPromptSpec & spec, const ClassifierLM & lm,
                         const SentenceEmbedder & emb, bool * used_fallback) {
    if (classes.empty()) throw config_error("empty classification vocabulary");
    if (canonical_captions.size() != classes.size())
        throw config_error("need one canonical caption per class: " +
                           std::to_string(canonical_captions.size()) + " captions for " +
                           std::to_string(classes.size()) + " classes");
    if (used_fallback) *used_fallback = false;
    if (classes.size() == 1) return 0;

    std::vector<int64_t> matched = scan_class_names(lm.answer(spec.render(caption, classes)),
                                                    classes);
    if (matched.size() == 1) return matched[0];

    if (used_fallback) *used_fallback = true;
    Tensor probe = emb.embed(caption);
    int64_t best = 0;
    double best_sim = -2.0;
    for (size_t i = 0; i < classes.size(); ++i) {
        Tensor ref = emb.embed(canonical_captions[i]);
        double sim = 0.0;
        if (vec_norm(probe) != 0.0 && vec_norm(ref) != 0.0)
            for (size_t k = 0; k < probe.data.size(); ++k) sim += probe.data[k] * ref.data[k];
        if (sim > best_sim) {
            best_sim = sim;
            best = int64_t(i);
        }
    }
    return best;
}

F1Report macro_f1(const std::vector<int64_t> & predictions, const std::vector<int64_t> & truths,
                  int64_t num_classes) {
    if (predictions.size() != truths.size())
        throw config_error("predictions and truths differ in length: " +
                           std::to_string(predictions.size()) + " vs " +
                           std::to_string(truths.size()));
    if (num_classes < 1) throw config_error("num_classes must be >= 1");
    std::vector<int64_t> tp(size_t(num_classes), 0), fp(size_t(num_classes), 0),
        fn(size_t(num_classes), 0), support(size_t(num_classes), 0),
        predicted(size_t(num_classes), 0);
    for (size_t i = 0; i < truths.size(); ++i) {
        int64_t t = truths[i], p = predictions[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw config_error("class index out of range at sample " + std::to_string(i));
        ++support[size_t(t)];
        ++predicted[size_t(p)];
        if (t == p) ++tp[size_t(t)];
        else {
            ++fp[size_t(p)];
            ++fn[size_t(t)];
        }
    }
    F1Report rep;
    rep.per_class.resize(size_t(num_classes));
    double total = 0.0;
    for (int64_t c = 0; c < num_classes; ++c) {
        ClassScore & s = rep.per_class[size_t(c)];
        s.support = support[size_t(c)];
        s.predicted = predicted[size_t(c)];
        double denom_p = double(tp[size_t(c)] + fp[size_t(c)]);
        double denom_r = double(tp[size_t(c)] + fn[size_t(c)]);
        s.precision = denom_p > 0 ? double(tp[size_t(c)]) / denom_p : 0.0;
        s.recall = denom_r > 0 ? double(tp[size_t(c)]) / denom_r : 0.0;
        s.f1 = (s.precision + s.recall) > 0
                   ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
                   : 0.0;
        s.zero_flag = s.support == 0 && s.predicted == 0;
        total += s.f1;
    }
    rep.macro_f1 = total / double(num_classes);
    return rep;
}

namespace {

void fill_cosine_stats(EvalReport & rep, const std::vector<double> & sims) {
    rep.sample_count = int64_t(sims.size());
    if (sims.empty()) return;
    double sum = 0.0;
    for (double s : sims) sum += s;
    rep.cosine_mean = sum / double(sims.size());
    double sq = 0.0;
    for (double s : sims) sq += (s - rep.cosine_mean) * (s - rep.cosine_mean);
    rep.cosine_std = std::sqrt(sq / double(sims.size()));
}

} // namespace

EvalReport score_captions(const std::vector<EvalItem> & items,
                          const std::vector<std::string> & classes,
                          const std::vector<std::string> & canonical_captions,
                          const ClassifierPromptSpec & spec, const ClassifierLM & lm,
                          const SentenceEmbedder & emb) {
    if (classes.empty()) throw config_error("empty classification vocabulary");
    EvalReport rep;
    rep.class_names = classes;
    std::vector<double> sims;
    std::vector<int64_t> preds, truths;
    for (const auto & item : items) {
        if (item.truth < 0 || item.truth >= int64_t(classes.size()))
            throw data_error("record '" + item.id + "' has class index " +
                             std::to_string(item.truth) + " outside the vocabulary");
        bool warned = false;
        sims.push_back(caption_similarity(item.generated, item.reference, emb, &warned));
        if (warned) ++rep.warning_count;
        bool fell_back = false;
        preds.push_back(classify_caption(item.generated, classes, canonical_captions, spec, lm,
                                         emb, &fell_back));
        if (fell_back) ++rep.fallback_count;
        truths.push_back(item.truth);
    }
    fill_cosine_stats(rep, sims);
    if (!items.empty()) {
        F1Report f1 = macro_f1(preds, truths, int64_t(classes.size()));
        rep.macro_f1 = f1.macro_f1;
        rep.per_class = std::move(f1.per_class);
        for (size_t i = 0; i < rep.per_class.size(); ++i) rep.per_class[i].name = classes[i];
    }
    return rep;
}

EvalReport open_set_eval(const std::vector<OpenSetItem> & items,
                         const std::vector<std::string> & seen_classes,
                         const std::vector<std::string> & unseen_classes,
                         const std::map<std::string, std::string> & canonical_captions,
                         const ClassifierPromptSpec & spec, const ClassifierLM & lm,
                         const SentenceEmbedder & emb, bool restrict_to_seen) {
    if (unseen_classes.empty()) throw config_error("open-set evaluation needs unseen classes");
    std::set<std::string> seen_set(seen_classes.begin(), seen_classes.end());
    std::set<std::string> unseen_set;
    for (const auto & u : unseen_classes) {
        if (seen_set.count(u))
            throw config_error("unseen class '" + u + "' overlaps the training vocabulary");
        if (!unseen_set.insert(u).second)
            throw config_error("duplicate unseen class '" + u + "'");
    }

    std::vector<std::string> extended = seen_classes;
    extended.insert(extended.end(), unseen_classes.begin(), unseen_classes.end());
    std::sort(extended.begin(), extended.end());
    auto extended_index = [&extended](const std::string & name) {
        auto it = std::lower_bound(extended.begin(), extended.end(), name);
        return int64_t(it - extended.begin());
    };

    const std::vector<std::string> & candidates = restrict_to_seen ? seen_classes : extended;
    std::vector<std::string> captions_for;
    for (const auto & c : candidates) {
        auto it = canonical_captions.find(c);
        if (it == canonical_captions.end())
            throw config_error("no canonical caption for class '" + c + "'");
        captions_for.push_back(it->second);
    }

    EvalReport rep;
    rep.class_names = extended;
    rep.unseen_classes = unseen_classes;
    std::vector<double> sims;
    std::vector<int64_t> preds, truths;
    for (const auto & item : items) {
        if (!unseen_set.count(item.truth_class))
            throw data_error("record '" + item.id + "' labels class '" + item.truth_class +
                             "' which is not in the unseen list");
        bool warned = false;
        sims.push_back(caption_similarity(item.generated, item.reference, emb, &warned));
        if (warned) ++rep.warning_count;
        bool fell_back = false;
        int64_t pick = classify_caption(item.generated, candidates, captions_for, spec, lm, emb,
                                        &fell_back);
        if (fell_back) ++rep.fallback_count;
        preds.push_back(extended_index(candidates[size_t(pick)]));
        truths.push_back(extended_index(item.truth_class));
    }
    fill_cosine_stats(rep, sims);
    if (!items.empty()) {
        F1Report f1 = macro_f1(preds, truths, int64_t(extended.size()));
        rep.per_class = std::move(f1.per_class);
        for (size_t i = 0; i < rep.per_class.size(); ++i) rep.per_class[i].name = extended[i];
        // the protocol's score averages over the novel classes only
        double total = 0.0;
        for (const auto & u : unseen_classes) total += rep.per_class[size_t(extended_index(u))].f1;
        rep.macro_f1 = total / double(unseen_classes.size());
    }
    return rep;
}

std::string EvalReport::to_json() const {
    json j;
    j["sample_count"] = sample_count;
    j["cosine_mean"] = cosine_mean;
    j["cosine_std"] = cosine_std;
    j["macro_f1"] = macro_f1;
    j["fallback_count"] = fallback_count;
    j["warning_count"] = warning_count;
    j["class_names"] = class_names;
    if (!unseen_classes.empty()) j["unseen_classes"] = unseen_classes;
    j["per_class"] = json::array();
    for (const auto & s : per_class)
        j["per_class"].push_back({{"class", s.name},
                                  {"precision", s.precision},
                                  {"recall", s.recall},
                                  {"f1", s.f1},
                                  {"support", s.support},
                                  {"predicted", s.predicted},
                                  {"zero_flag", s.zero_flag}});
    return j.dump(2);
}

std::string EvalReport::to_table() const {
    std::string out;
    out += "samples                  " + std::to_string(sample_count) + "\n";
    out += "caption cosine           " + fmt("%.4f", cosine_mean) + " +/- " +
           fmt("%.4f", cosine_std) + "\n";
    out += "macro F1                 " + fmt("%.4f", macro_f1);
    if (!unseen_classes.empty()) {
        out += " (over " + std::to_string(unseen_classes.size()) + " unseen classes)";
    }
    out += "\n";
    out += "fallback classifications " + std::to_string(fallback_count) + "\n";
    out += "empty-caption warnings   " + std::to_string(warning_count) + "\n";
    if (!unseen_classes.empty()) {
        out += "unseen classes          ";
        for (const auto & u : unseen_classes) out += " " + u;
        out += "\n";
    }
    out += "\n";
    char head[128];
    std::snprintf(head, sizeof head, "%-28s %7s %7s %7s %8s\n", "class", "prec", "recall", "f1",
                  "support");
    out += head;
    for (const auto & s : per_class) {
        char line[160];
        std::snprintf(line, sizeof line, "%-28s %7.3f %7.3f %7.3f %8lld%s\n", s.name.c_str(),
                      s.precision, s.recall, s.f1, static_cast<long long>(s.support),
                      s.zero_flag ? "  (no data)" : "");
        out += line;
    }
    return out;
}

} // namespace ovhhir
