#include "ovhhir/corpus.hpp"

#include "json.hpp"
#include "httplib.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace ovhhir {

using nlohmann::json;

const char * DEFAULT_PROMPT =
    "Q: Describe the interaction between the two people in the video.";

// --- escaping --------------------------------------------------------------

namespace {

std::string escape_text(const std::string & s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '<': out += "\\<"; break;
        default: out += c;
        }
    }
    return out;
}

// Unescapes s[i..] until `stop` (unescaped) or end of string. Raw '<' and
// raw tab are rejected; the caller handles markers and separators itself.
std::string unescape_until(const std::string & s, size_t & i, char stop, bool stop_at_lt) {
    std::string out;
    while (i < s.size()) {
        char c = s[i];
        if (c == stop) break;
        if (c == '<') {
            if (stop_at_lt) break;
            throw parse_error("unescaped '<' outside a marker", i);
        }
        if (c == '\t') throw parse_error("unescaped tab", i);
        if (c == '\\') {
            if (i + 1 >= s.size()) throw parse_error("unterminated escape", i);
            char e = s[i + 1];
            switch (e) {
            case '\\': out += '\\'; break;
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case '<': out += '<'; break;
            default: throw parse_error(std::string("unknown escape '\\") + e + "'", i);
            }
            i += 2;
            continue;
        }
        out += c;
        ++i;
    }
    return out;
}

void check_canonical(const ChatRecord & r) {
    int p1 = 0, p2 = 0, bg = 0;
    bool prev_text = false;
    for (const auto & seg : r.segments) {
        if (seg.kind == ChatSegment::TEXT) {
            if (seg.text.empty()) throw config_error("chat record: empty text segment");
            if (prev_text) throw config_error("chat record: adjacent text segments");
            prev_text = true;
        } else {
            prev_text = false;
            switch (seg.stream) {
            case StreamId::P1: ++p1; break;
            case StreamId::P2: ++p2; break;
            case StreamId::BG: ++bg; break;
            }
        }
    }
    if (p1 != 1 || p2 != 1 || bg > 1)
        throw config_error("chat record: need exactly one <VID_P1> and <VID_P2> slot and at most one <VID_BG> slot");
    if (r.target.empty()) throw config_error("chat record: empty target caption");
}

} // namespace

const char * stream_marker(StreamId s) {
    switch (s) {
    case StreamId::P1: return "<VID_P1>";
    case StreamId::P2: return "<VID_P2>";
    case StreamId::BG: return "<VID_BG>";
    }
    throw config_error("bad stream id");
}

std::string serialize_chat_record(const ChatRecord & record) {
    check_canonical(record);
    std::string out = "Q:";
    for (const auto & seg : record.segments) {
        if (seg.kind == ChatSegment::TEXT) out += escape_text(seg.text);
        else out += stream_marker(seg.stream);
    }
    out += "\tA:";
    out += escape_text(record.target);
    return out;
}

ChatRecord parse_chat_record(const std::string & line) {
    if (line.rfind("Q:", 0) != 0) throw parse_error("expected 'Q:' prefix", 0);
    ChatRecord rec;
    size_t i = 2;
    bool seen[3] = {false, false, false};
    while (i < line.size() && line[i] != '\t') {
        if (line[i] == '<') {
            size_t close = line.find('>', i);
            if (close == std::string::npos || close - i > 8)
                throw parse_error("unterminated marker", i);
            std::string tok = line.substr(i, close - i + 1);
            StreamId sid;
            if (tok == "<VID_P1>") sid = StreamId::P1;
            else if (tok == "<VID_P2>") sid = StreamId::P2;
            else if (tok == "<VID_BG>") sid = StreamId::BG;
            else throw parse_error("unknown marker " + tok, i);
            if (seen[static_cast<int>(sid)])
                throw parse_error("duplicate marker " + tok, i);
            seen[static_cast<int>(sid)] = true;
            rec.segments.push_back(ChatSegment::make_slot(sid));
            i = close + 1;
        } else {
            size_t start = i;
            std::string text = unescape_until(line, i, '\t', /*stop_at_lt=*/true);
            if (text.empty()) throw parse_error("internal: empty text run", start);
            rec.segments.push_back(ChatSegment::make_text(std::move(text)));
        }
    }
    if (i >= line.size()) throw parse_error("missing answer separator", line.size());
    ++i; // tab
    if (line.compare(i, 2, "A:") != 0) throw parse_error("expected 'A:' prefix", i);
    i += 2;
    rec.target = unescape_until(line, i, '\0', /*stop_at_lt=*/false);
    if (i != line.size()) throw parse_error("unescaped NUL in target", i);
    if (!seen[0]) throw parse_error("missing <VID_P1> marker", line.size());
    if (!seen[1]) throw parse_error("missing <VID_P2> marker", line.size());
    if (rec.target.empty()) throw parse_error("empty target caption", line.size());
    return rec;
}

// --- label standardization ---------------------------------------------

std::string canonicalize_label(const std::string & label) {
    return collapse_whitespace(trim(lowercase(label)));
}

bool is_sentence_like(const std::string & text) {
    std::string t = trim(text);
    if (t.empty() || t.back() != '.') return false;
    return split_words(t).size() >= 6;
}

std::string standardize_label(const std::string & hard_label, CaptionExpander & expander) {
    if (trim(hard_label).empty()) throw usage_error("standardize_label: empty label");
    if (is_sentence_like(hard_label)) return trim(hard_label);
    return expander.expand(hard_label);
}

TemplateExpander::TemplateExpander(std::map<std::string, std::string> table,
                                   std::string fallback_pattern)
    : fallback_pattern_(std::move(fallback_pattern)) {
    for (auto & [k, v] : table) table_[canonicalize_label(k)] = v;
}

TemplateExpander TemplateExpander::from_file(const std::filesystem::path & tsv_path,
                                             std::string fallback_pattern) {
    std::ifstream in(tsv_path);
    if (!in) throw data_error("cannot open template table: " + tsv_path.string());
    std::map<std::string, std::string> table;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw data_error(tsv_path.string() + ":" + std::to_string(lineno) +
                             ": expected <label>\\t<sentence>");
        std::string label = canonicalize_label(line.substr(0, tab));
        std::string sentence = trim(line.substr(tab + 1));
        if (label.empty() || sentence.empty())
            throw data_error(tsv_path.string() + ":" + std::to_string(lineno) +
                             ": empty label or sentence");
        if (table.count(label))
            throw data_error(tsv_path.string() + ":" + std::to_string(lineno) +
                             ": duplicate template for '" + label + "'");
        table[label] = sentence;
    }
    return TemplateExpander(std::move(table), std::move(fallback_pattern));
}

std::string TemplateExpander::expand(const std::string & hard_label) {
    std::string key = canonicalize_label(hard_label);
    auto it = table_.find(key);
    if (it != table_.end()) return it->second;
    if (!fallback_pattern_.empty()) {
        std::string out = fallback_pattern_;
        size_t pos = out.find("{label}");
        if (pos != std::string::npos) out.replace(pos, 7, key);
        return out;
    }
    throw data_error("no caption template for label '" + key + "'");
}

bool TemplateExpander::has_template(const std::string & label) const {
    return table_.count(canonicalize_label(label)) != 0;
}

// --- http expander ----------------------------------------------------

namespace {

std::string url_encode(const std::string & s) {
    static const char * hexd = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') out += char(c);
        else {
            out += '%';
            out += hexd[c >> 4];
            out += hexd[c & 15];
        }
    }
    return out;
}

} // namespace

HttpCaptionExpander::HttpCaptionExpander(std::string base_url, std::filesystem::path cache_path,
                                         int timeout_ms, int max_retries)
    : cache_path_(std::move(cache_path)), timeout_ms_(timeout_ms), max_retries_(max_retries) {
    std::string url = base_url;
    if (url.rfind("http://", 0) == 0) url = url.substr(7);
    while (!url.empty() && url.back() == '/') url.pop_back();
    size_t colon = url.find(':');
    if (colon == std::string::npos) {
        host_ = url;
        port_ = 80;
    } else {
        host_ = url.substr(0, colon);
        port_ = std::stoi(url.substr(colon + 1));
    }
    if (host_.empty()) throw config_error("caption service url has no host: " + base_url);

    if (std::filesystem::exists(cache_path_)) {
        std::ifstream in(cache_path_);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            size_t tab = line.find('\t');
            if (tab == std::string::npos)
                throw data_error("corrupt expander cache: " + cache_path_.string());
            cache_[line.substr(0, tab)] = line.substr(tab + 1);
        }
    }
}

std::string HttpCaptionExpander::expand(const std::string & hard_label) {
    std::string key = canonicalize_label(hard_label);
    if (key.empty()) throw usage_error("expand: empty label");
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;

    httplib::Client client(host_, port_);
    client.set_connection_timeout(0, timeout_ms_ * 1000);
    client.set_read_timeout(0, timeout_ms_ * 1000);
    std::string path = "/expand?label=" + url_encode(key);
    std::string last_err;
    for (int attempt = 0; attempt <= max_retries_; ++attempt) {
        auto res = client.Get(path);
        if (!res) {
            last_err = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_err = "status " + std::to_string(res->status);
            continue;
        }
        std::string sentence = trim(res->body);
        if (sentence.empty() || sentence.find('\n') != std::string::npos ||
            sentence.find('\t') != std::string::npos) {
            last_err = "malformed body";
            continue;
        }
        cache_[key] = sentence;
        std::ofstream out(cache_path_, std::ios::app);
        if (!out) throw data_error("cannot write expander cache: " + cache_path_.string());
        out << key << '\t' << sentence << '\n';
        return sentence;
    }
    throw data_error("caption service failed for '" + key + "' after " +
                     std::to_string(max_retries_ + 1) + " attempts (" + last_err + ")");
}

// --- vocabulary ---------------------------------------------------------

void SourceDescriptor::validate() const {
    if (trim(name).empty()) throw data_error("source with empty name");
    if (action_labels.empty()) throw data_error("source '" + name + "' has no labels");
    if (sample_count < 0)
        throw data_error("source '" + name + "' has negative sample count");
    std::set<std::string> seen;
    for (const auto & l : action_labels) {
        std::string c = canonicalize_label(l);
        if (c.empty()) throw data_error("source '" + name + "' has an empty label");
        if (!seen.insert(c).second)
            throw data_error("source '" + name + "' repeats label '" + c + "'");
    }
    for (const auto & clip : clips) {
        if (clip.id.empty()) throw data_error("source '" + name + "' has a clip without id");
        if (!seen.count(canonicalize_label(clip.label)))
            throw data_error("source '" + name + "' clip '" + clip.id +
                             "' uses unlisted label '" + clip.label + "'");
        if (clip.clip_path.empty())
            throw data_error("source '" + name + "' clip '" + clip.id + "' has no clip path");
    }
}

int64_t UnifiedVocabulary::index_of(const std::string & canonical_name) const {
    auto it = std::lower_bound(classes.begin(), classes.end(), canonical_name);
    if (it == classes.end() || *it != canonical_name) return -1;
    return it - classes.begin();
}

int64_t UnifiedVocabulary::resolve(const std::string & source, const std::string & raw_label) const {
    auto it = alias_map.find({source, canonicalize_label(raw_label)});
    if (it == alias_map.end())
        throw data_error("label '" + raw_label + "' is not registered for source '" + source + "'");
    return it->second;
}

UnifiedVocabulary build_vocabulary(const std::vector<SourceDescriptor> & sources,
                                   const std::vector<AliasRule> & merge_rules) {
    if (sources.empty()) throw usage_error("build_vocabulary: no sources");
    std::set<std::string> source_names;
    for (const auto & s : sources) {
        s.validate();
        if (!source_names.insert(s.name).second)
            throw data_error("duplicate source name '" + s.name + "'");
    }

    std::map<std::string, std::string> rules;
    for (const auto & r : merge_rules) {
        std::string from = canonicalize_label(r.label);
        std::string to = canonicalize_label(r.canonical);
        if (from.empty() || to.empty()) throw config_error("merge rule with empty side");
        if (from == to) throw config_error("merge rule maps '" + from + "' to itself");
        auto it = rules.find(from);
        if (it != rules.end() && it->second != to)
            throw config_error("conflicting merge rules for '" + from + "': '" + it->second +
                               "' vs '" + to + "'");
        rules[from] = to;
    }
    // Single-step application only; a chained rule would silently depend on
    // application order, so it is rejected instead.
    for (const auto & [from, to] : rules)
        if (rules.count(to))
            throw config_error("chained merge rule: '" + from + "' -> '" + to + "' -> '" +
                               rules.at(to) + "'");

    auto canonical_of = [&](const std::string & raw) {
        std::string c = canonicalize_label(raw);
        auto it = rules.find(c);
        return it == rules.end() ? c : it->second;
    };

    std::set<std::string> class_set;
    for (const auto & s : sources)
        for (const auto & l : s.action_labels) class_set.insert(canonical_of(l));

    UnifiedVocabulary vocab;
    vocab.classes.assign(class_set.begin(), class_set.end());
    for (const auto & s : sources)
        for (const auto & l : s.action_labels) {
            int64_t idx = vocab.index_of(canonical_of(l));
            vocab.alias_map[{s.name, canonicalize_label(l)}] = idx;
        }

    size_t total_labels = 0;
    for (const auto & s : sources) total_labels += s.action_labels.size();
    if (vocab.classes.size() > total_labels)
        throw numeric_error("vocabulary larger than the union of source labels");
    return vocab;
}

// --- manifest -------------------------------------------------------------

std::vector<InteractionRecord> build_manifest(const std::vector<SourceDescriptor> & sources,
                                              const UnifiedVocabulary & vocab,
                                              CaptionExpander & expander) {
    std::vector<InteractionRecord> records;
    std::set<std::string> ids;
    for (const auto & src : sources) {
        for (const auto & clip : src.clips) {
            InteractionRecord r;
            r.id = src.name + "/" + clip.id;
            if (!ids.insert(r.id).second) throw data_error("duplicate record id '" + r.id + "'");
            r.source = src.name;
            r.hard_label = canonicalize_label(clip.label);
            r.canonical_class = vocab.resolve(src.name, clip.label);
            r.soft_caption = clip.caption.empty()
                                 ? standardize_label(vocab.classes[r.canonical_class], expander)
                                 : trim(clip.caption);
            if (r.soft_caption.empty())
                throw data_error("record '" + r.id + "' resolved to an empty caption");
            r.clip_path = (src.root_path / clip.clip_path).string();
            r.mask_path = clip.mask_path.empty() ? "" : (src.root_path / clip.mask_path).string();
            records.push_back(std::move(r));
        }
    }
    return records;
}

void validate_manifest(const std::vector<InteractionRecord> & records,
                       const UnifiedVocabulary & vocab) {
    std::set<std::string> ids;
    for (const auto & r : records) {
        if (r.id.empty()) throw data_error("manifest record with empty id");
        if (!ids.insert(r.id).second) throw data_error("duplicate record id '" + r.id + "'");
        if (r.canonical_class < 0 || r.canonical_class >= int64_t(vocab.classes.size()))
            throw data_error("record '" + r.id + "' has class index " +
                             std::to_string(r.canonical_class) + " outside the vocabulary");
        if (r.soft_caption.empty()) throw data_error("record '" + r.id + "' has no caption");
        if (r.clip_path.empty()) throw data_error("record '" + r.id + "' has no clip path");
    }
}

namespace {

constexpr const char * MANIFEST_HEADER = "# ovhhir-manifest v1";
constexpr int MANIFEST_FIELDS = 7;

std::string escape_field(const std::string & s) { return escape_text(s); }

std::vector<std::string> split_fields(const std::string & line, size_t lineno) {
    std::vector<std::string> fields;
    std::string cur;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (c == '\t') {
            fields.push_back(cur);
            cur.clear();
        } else if (c == '\\') {
            if (i + 1 >= line.size())
                throw data_error("manifest line " + std::to_string(lineno) +
                                 ": unterminated escape");
            char e = line[++i];
            switch (e) {
            case '\\': cur += '\\'; break;
            case 'n': cur += '\n'; break;
            case 't': cur += '\t'; break;
            case '<': cur += '<'; break;
            default:
                throw data_error("manifest line " + std::to_string(lineno) +
                                 ": unknown escape '\\" + std::string(1, e) + "'");
            }
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace

void write_manifest(const std::vector<InteractionRecord> & records,
                    const std::filesystem::path & path, uint64_t seed) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write manifest: " + path.string());
    out << MANIFEST_HEADER << "\n# seed=" << seed << "\n";
    for (const auto & r : records) {
        out << escape_field(r.id) << '\t' << escape_field(r.source) << '\t'
            << escape_field(r.hard_label) << '\t' << r.canonical_class << '\t'
            << escape_field(r.soft_caption) << '\t' << escape_field(r.clip_path) << '\t'
            << escape_field(r.mask_path) << '\n';
    }
    if (!out) throw data_error("short write to manifest: " + path.string());
}

std::vector<InteractionRecord> read_manifest(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open manifest: " + path.string());
    std::string line;
    size_t lineno = 0;
    std::vector<InteractionRecord> records;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (line != MANIFEST_HEADER)
                throw data_error(path.string() + " is not a manifest (bad header line)");
            saw_header = true;
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        auto fields = split_fields(line, lineno);
        if (fields.size() != MANIFEST_FIELDS)
            throw data_error("manifest line " + std::to_string(lineno) + ": expected " +
                             std::to_string(MANIFEST_FIELDS) + " fields, got " +
                             std::to_string(fields.size()));
        InteractionRecord r;
        r.id = fields[0];
        r.source = fields[1];
        r.hard_label = fields[2];
        try {
            size_t used = 0;
            r.canonical_class = std::stoll(fields[3], &used);
            if (used != fields[3].size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception &) {
            throw data_error("manifest line " + std::to_string(lineno) +
                             ": bad class index '" + fields[3] + "'");
        }
        r.soft_caption = fields[4];
        r.clip_path = fields[5];
        r.mask_path = fields[6];
        records.push_back(std::move(r));
    }
    if (!saw_header) throw data_error(path.string() + " is empty");
    return records;
}

// --- chat file --------------------------------------------------------

ChatRecord chat_record_for(const InteractionRecord & record, bool background_slot,
                           const std::string & prompt) {
    ChatRecord rec;
    if (!trim(prompt).empty()) rec.segments.push_back(ChatSegment::make_text(trim(prompt) + " "));
    rec.segments.push_back(ChatSegment::make_slot(StreamId::P1));
    rec.segments.push_back(ChatSegment::make_slot(StreamId::P2));
    if (background_slot) rec.segments.push_back(ChatSegment::make_slot(StreamId::BG));
    rec.target = record.soft_caption;
    return rec;
}

void write_chat_file(const std::vector<InteractionRecord> & records,
                     const std::filesystem::path & path, bool background_slot,
                     const std::string & prompt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write chat file: " + path.string());
    for (const auto & r : records)
        out << serialize_chat_record(chat_record_for(r, background_slot, prompt)) << '\n';
    if (!out) throw data_error("short write to chat file: " + path.string());
}

// --- json loaders ------------------------------------------------------

namespace {

json load_json(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error & e) {
        throw data_error(path.string() + ": " + e.what());
    }
}

} // namespace

std::vector<SourceDescriptor> load_sources(const std::filesystem::path & json_path) {
    json doc = load_json(json_path);
    if (!doc.is_object() || !doc.contains("sources") || !doc["sources"].is_array())
        throw data_error(json_path.string() + ": expected {\"sources\": [...]}");
    std::vector<SourceDescriptor> sources;
    auto base = json_path.parent_path();
    for (const auto & js : doc["sources"]) {
        SourceDescriptor s;
        s.name = js.value("name", "");
        s.sample_count = js.value("sample_count", int64_t(0));
        std::string root = js.value("root", "");
        s.root_path = root.empty() ? base : (std::filesystem::path(root).is_absolute()
                                                 ? std::filesystem::path(root)
                                                 : base / root);
        if (!js.contains("labels") || !js["labels"].is_array())
            throw data_error(json_path.string() + ": source '" + s.name + "' missing labels");
        for (const auto & l : js["labels"]) s.action_labels.push_back(l.get<std::string>());
        if (js.contains("clips")) {
            for (const auto & jc : js["clips"]) {
                ClipEntry c;
                c.id = jc.value("id", "");
                c.label = jc.value("label", "");
                c.clip_path = jc.value("clip", "");
                c.mask_path = jc.value("mask", "");
                c.caption = jc.value("caption", "");
                s.clips.push_back(std::move(c));
            }
        }
        s.validate();
        sources.push_back(std::move(s));
    }
    if (sources.empty()) throw data_error(json_path.string() + ": no sources");
    return sources;
}

std::vector<AliasRule> load_rules(const std::filesystem::path & json_path) {
    json doc = load_json(json_path);
    if (!doc.is_object() || !doc.contains("rules") || !doc["rules"].is_array())
        throw data_error(json_path.string() + ": expected {\"rules\": [...]}");
    std::vector<AliasRule> rules;
    for (const auto & jr : doc["rules"]) {
        AliasRule r;
        r.label = jr.value("label", "");
        r.canonical = jr.value("canonical", "");
        if (r.label.empty() || r.canonical.empty())
            throw data_error(json_path.string() + ": rule with empty label or canonical");
        rules.push_back(std::move(r));
    }
    return rules;
}

void write_vocabulary(const UnifiedVocabulary & vocab, const std::filesystem::path & path,
                      uint64_t seed) {
    json doc;
    doc["format"] = "ovhhir-vocab-v1";
    doc["seed"] = seed;
    doc["classes"] = vocab.classes;
    json aliases = json::array();
    for (const auto & [key, idx] : vocab.alias_map)
        aliases.push_back({{"source", key.first}, {"label", key.second}, {"class", idx}});
    doc["aliases"] = std::move(aliases);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write vocabulary: " + path.string());
    out << doc.dump(2) << '\n';
}

UnifiedVocabulary read_vocabulary(const std::filesystem::path & path) {
    json doc = load_json(path);
    if (doc.value("format", "") != "ovhhir-vocab-v1")
        throw data_error(path.string() + " is not a vocabulary file");
    UnifiedVocabulary vocab;
    vocab.classes = doc.at("classes").get<std::vector<std::string>>();
    if (!std::is_sorted(vocab.classes.begin(), vocab.classes.end()))
        throw data_error(path.string() + ": classes are not sorted");
    for (const auto & ja : doc.at("aliases")) {
        int64_t idx = ja.at("class").get<int64_t>();
        if (idx < 0 || idx >= int64_t(vocab.classes.size()))
            throw data_error(path.string() + ": alias with out-of-range class index");
        vocab.alias_map[{ja.at("source").get<std::string>(), ja.at("label").get<std::string>()}] =
            idx;
    }
    return vocab;
}

} // namespace ovhhir
