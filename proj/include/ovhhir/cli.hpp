#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace ovhhir {

// Option structs mirror the command-line flags one-to-one, so every
// subcommand stays callable in-process (tests drive them without spawning).

struct BuildDataOptions {
    std::filesystem::path sources;   // descriptor json (generated when synthetic)
    std::filesystem::path rules;     // merge-rule json; empty = no rules
    std::filesystem::path templates; // caption tsv; empty = pattern-only expander
    std::string expand_url;          // caption service; empty = offline
    std::filesystem::path out;
    uint64_t seed = 7;
    bool background_slot = true;
    bool synthetic = false;          // write the demo corpus under out/corpus first
    std::string prompt;              // empty = DEFAULT_PROMPT
};

struct MaskOptions {
    std::filesystem::path clip;
    std::filesystem::path masks;
    std::filesystem::path out;
    int64_t frames = 0;              // uniform sample count; 0 = keep all frames
    int64_t height = 0;              // letterbox target; 0 = keep frame size
    int64_t width = 0;
};

struct TrainOptions {
    std::filesystem::path manifest;
    std::filesystem::path out;
    std::filesystem::path config;       // TrainConfig json; empty = defaults
    std::filesystem::path model_config; // ModelConfig json; empty = defaults
    std::filesystem::path resume;       // checkpoint to continue from
    std::filesystem::path tokenizer;    // required with --resume
    std::optional<uint64_t> seed;       // flag overrides beat the config file
    std::optional<int64_t> steps;
    std::optional<double> lr;
    std::optional<int64_t> batch_size;
    std::optional<int64_t> checkpoint_interval;
    std::string prompt;
};

struct EvalOptions {
    std::filesystem::path manifest;
    std::filesystem::path checkpoint;
    std::filesystem::path tokenizer;
    std::filesystem::path vocab;
    std::filesystem::path templates; // canonical captions for the classifier
    std::filesystem::path out;
    bool open_set = false;
    std::filesystem::path unseen;    // class per line; required with open_set
    bool restrict_to_seen = false;   // closed-vocabulary baseline (open set only)
    std::string source;              // keep records of this source only
    int64_t max_new_tokens = 24;
    std::string prompt;
};

struct GenerateOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path tokenizer;
    std::filesystem::path clip;
    std::filesystem::path masks; // empty = everything counts as background
    std::string prompt;
    int64_t max_new_tokens = 24;
    int64_t top_k = 0;           // 0 = greedy
    double temperature = 1.0;
    uint64_t seed = 0;           // sampler seed, top-k only
};

void cmd_build_data(const BuildDataOptions & opt, std::ostream & out);
void cmd_mask(const MaskOptions & opt, std::ostream & out);
void cmd_train(const TrainOptions & opt, std::ostream & out);
void cmd_eval(const EvalOptions & opt, std::ostream & out);
void cmd_generate(const GenerateOptions & opt, std::ostream & out);

// Parses argv, dispatches, and maps the error taxonomy onto exit codes:
// 0 success, 2 usage, 3 data/config, 4 numeric, 1 anything else.
int run_cli(int argc, const char * const * argv, std::ostream & out, std::ostream & err);

} // namespace ovhhir
