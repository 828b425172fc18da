#pragma once

#include "ovhhir/common.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ovhhir {

// One clip entry inside a source descriptor. `caption` overrides the
// expander-generated soft caption when present.
struct ClipEntry {
    std::string id;
    std::string label;
    std::string clip_path;
    std::string mask_path;    // empty = absent
    std::string caption;      // empty = derive from the label
};

struct SourceDescriptor {
    std::string name;
    std::vector<std::string> action_labels;
    int64_t sample_count = 0;
    std::filesystem::path root_path;
    std::vector<ClipEntry> clips;

    void validate() const;
};

struct AliasRule {
    std::string label;     // raw label (canonicalized before use)
    std::string canonical; // merged class name
};

struct UnifiedVocabulary {
    std::vector<std::string> classes; // sorted canonical names
    // (source name, canonicalized raw label) -> class index
    std::map<std::pair<std::string, std::string>, int64_t> alias_map;

    int64_t index_of(const std::string & canonical_name) const;
    // throws data_error when (source, label) was never registered
    int64_t resolve(const std::string & source, const std::string & raw_label) const;
};

struct InteractionRecord {
    std::string id;
    std::string source;
    std::string hard_label;
    int64_t canonical_class = -1;
    std::string soft_caption;
    std::string clip_path;
    std::string mask_path; // empty = absent
};

// --- chat record format ------------------------------------------------

enum class StreamId { P1, P2, BG };

const char * stream_marker(StreamId s);

struct ChatSegment {
    enum Kind { TEXT, SLOT } kind;
    std::string text;  // TEXT
    StreamId stream = StreamId::P1; // SLOT

    static ChatSegment make_text(std::string t) { return {TEXT, std::move(t), StreamId::P1}; }
    static ChatSegment make_slot(StreamId s) { return {SLOT, {}, s}; }

    bool operator==(const ChatSegment & o) const {
        return kind == o.kind && (kind == TEXT ? text == o.text : stream == o.stream);
    }
};

// Canonical form: non-empty text segments, no two adjacent text segments,
// exactly one P1 and one P2 slot, at most one BG slot, non-empty target.
struct ChatRecord {
    std::vector<ChatSegment> segments;
    std::string target;

    bool operator==(const ChatRecord & o) const {
        return segments == o.segments && target == o.target;
    }
};

// One line: `Q:` + segments (texts escaped, slots as literal <VID_*> markers)
// + tab + `A:` + escaped target. Escapes: \\ \n \t \<. Injective over
// canonical records; throws config_error on a non-canonical record.
std::string serialize_chat_record(const ChatRecord & record);
// Inverse of serialize on its image; parse_error carries the byte offset.
ChatRecord parse_chat_record(const std::string & line);

// --- label standardization ----------------------------------------------

// case-fold, trim, collapse internal whitespace
std::string canonicalize_label(const std::string & label);

// >= 6 words and a trailing '.' counts as an already-descriptive sentence
bool is_sentence_like(const std::string & text);

class CaptionExpander {
  public:
    virtual ~CaptionExpander() = default;
    // hard label -> one descriptive sentence
    virtual std::string expand(const std::string & hard_label) = 0;
};

// Deterministic expander over a shipped label -> sentence table.
class TemplateExpander : public CaptionExpander {
  public:
    explicit TemplateExpander(std::map<std::string, std::string> table,
                              std::string fallback_pattern = "");
    static TemplateExpander from_file(const std::filesystem::path & tsv_path,
                                      std::string fallback_pattern = "");

    std::string expand(const std::string & hard_label) override;

    bool has_template(const std::string & label) const;
    size_t size() const { return table_.size(); }

  private:
    std::map<std::string, std::string> table_; // canonicalized label -> sentence
    std::string fallback_pattern_;             // "{label}" placeholder; empty = none
};

// External-service expander: GET <base>/expand?label=... returning one
// sentence. Every response is cached on disk keyed by canonicalized label,
// so reruns resolve offline.
class HttpCaptionExpander : public CaptionExpander {
  public:
    HttpCaptionExpander(std::string base_url, std::filesystem::path cache_path,
                        int timeout_ms = 2000, int max_retries = 2);

    std::string expand(const std::string & hard_label) override;

    size_t cache_size() const { return cache_.size(); }

  private:
    std::string host_;
    int port_ = 80;
    std::filesystem::path cache_path_;
    int timeout_ms_;
    int max_retries_;
    std::map<std::string, std::string> cache_;
};

// Full-sentence pass-through, otherwise the expander decides.
std::string standardize_label(const std::string & hard_label, CaptionExpander & expander);

// --- vocabulary and manifest ----------------------------------------------

UnifiedVocabulary build_vocabulary(const std::vector<SourceDescriptor> & sources,
                                   const std::vector<AliasRule> & merge_rules);

// Per-record soft captions use the clip override when present, else the
// expander applied to the canonical class name. Ids are prefixed with the
// source name.
std::vector<InteractionRecord> build_manifest(const std::vector<SourceDescriptor> & sources,
                                              const UnifiedVocabulary & vocab,
                                              CaptionExpander & expander);

// Referential integrity: every record's class index is valid, ids unique,
// captions non-empty. Throws data_error on the first violation.
void validate_manifest(const std::vector<InteractionRecord> & records,
                       const UnifiedVocabulary & vocab);

void write_manifest(const std::vector<InteractionRecord> & records,
                    const std::filesystem::path & path, uint64_t seed);
std::vector<InteractionRecord> read_manifest(const std::filesystem::path & path);

// Default chat question put in front of the stream slots.
extern const char * DEFAULT_PROMPT;

ChatRecord chat_record_for(const InteractionRecord & record, bool background_slot,
                           const std::string & prompt = DEFAULT_PROMPT);

void write_chat_file(const std::vector<InteractionRecord> & records,
                     const std::filesystem::path & path, bool background_slot,
                     const std::string & prompt = DEFAULT_PROMPT);

// --- fixture/config file loaders ------------------------------------------

std::vector<SourceDescriptor> load_sources(const std::filesystem::path & json_path);
std::vector<AliasRule> load_rules(const std::filesystem::path & json_path);

void write_vocabulary(const UnifiedVocabulary & vocab, const std::filesystem::path & path,
                      uint64_t seed);
UnifiedVocabulary read_vocabulary(const std::filesystem::path & path);

} // namespace ovhhir
