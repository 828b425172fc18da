#include "ovhhir/cli.hpp"

#include "ovhhir/corpus.hpp"
#include "ovhhir/eval.hpp"
#include "ovhhir/model.hpp"
#include "ovhhir/synthetic.hpp"
#include "ovhhir/trainer.hpp"
#include "ovhhir/video.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

namespace ovhhir {

using nlohmann::json;

namespace {

// Keeps the expander total over labels without a shipped template.
constexpr const char * FALLBACK_PATTERN =
    "Two people perform a {label} interaction in the scene.";

std::string slurp(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path & path, const std::string & text) {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw data_error("cannot write " + path.string());
    o << text;
    if (!o) throw data_error("short write to " + path.string());
}

std::unique_ptr<CaptionExpander> make_expander(const std::filesystem::path & templates,
                                               const std::string & expand_url,
                                               const std::filesystem::path & cache_path) {
    if (!expand_url.empty())
        return std::make_unique<HttpCaptionExpander>(expand_url, cache_path);
    if (!templates.empty())
        return std::make_unique<TemplateExpander>(
            TemplateExpander::from_file(templates, FALLBACK_PATTERN));
    return std::make_unique<TemplateExpander>(std::map<std::string, std::string>{},
                                              FALLBACK_PATTERN);
}

uint64_t checkpoint_seed(const std::filesystem::path & path) {
    try {
        return json::parse(read_checkpoint_meta(path)).value("seed", uint64_t(0));
    } catch (const json::exception &) {
        return 0;
    }
}

MaskSet empty_masks(const FrameSequence & clip) {
    MaskSet m;
    m.t = clip.t;
    m.h = clip.h;
    m.w = clip.w;
    m.person1.assign(static_cast<size_t>(clip.t * clip.h * clip.w), 0);
    m.person2 = m.person1;
    return m;
}

MaskSet masks_for(const InteractionRecord & r, const FrameSequence & clip) {
    return r.mask_path.empty() ? empty_masks(clip) : load_masks(r.mask_path);
}

std::string one_line(const std::string & s) {
    std::string out = s;
    for (char & c : out)
        if (c == '\t' || c == '\n' || c == '\r') c = ' ';
    return out;
}

std::string table_row(const std::string & name, const std::string & classes,
                      const std::string & samples) {
    char line[160];
    std::snprintf(line, sizeof line, "%-28s %8s %10s", name.c_str(), classes.c_str(),
                  samples.c_str());
    return line;
}

std::string table_row(const std::string & name, size_t classes, int64_t samples) {
    return table_row(name, std::to_string(classes), std::to_string(samples));
}

std::string fmt_loss(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::vector<std::string> read_class_lines(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open " + path.string());
    std::vector<std::string> classes;
    std::string line;
    while (std::getline(in, line)) {
        std::string c = canonicalize_label(line);
        if (c.empty() || c[0] == '#') continue;
        classes.push_back(std::move(c));
    }
    if (classes.empty()) throw data_error(path.string() + ": no classes listed");
    return classes;
}

std::string effective_prompt(const std::string & flag) {
    return flag.empty() ? DEFAULT_PROMPT : flag;
}

// checkpoint + tokenizer -> ready model, config echo respected
OvhhirModel load_model(const std::filesystem::path & checkpoint,
                       const std::filesystem::path & tokenizer) {
    ModelConfig cfg = OvhhirModel::config_from_checkpoint(checkpoint);
    Tokenizer tok = Tokenizer::load(tokenizer);
    OvhhirModel model(cfg, std::move(tok), checkpoint_seed(checkpoint));
    model.load(checkpoint);
    return model;
}

} // namespace

void cmd_build_data(const BuildDataOptions & opt, std::ostream & out) {
    if (opt.out.empty()) throw usage_error("build-data: --out is required");
    if (opt.synthetic && !opt.sources.empty())
        throw usage_error("build-data: --sources and --synthetic are mutually exclusive");
    if (!opt.synthetic && opt.sources.empty())
        throw usage_error("build-data: provide --sources or --synthetic");

    std::filesystem::path sources_path = opt.sources;
    std::filesystem::path rules_path = opt.rules;
    if (opt.synthetic) {
        SyntheticSpec spec;
        spec.seed = opt.seed;
        sources_path = write_synthetic_corpus(opt.out / "corpus", spec);
        if (rules_path.empty()) rules_path = sources_path.parent_path() / "rules.json";
    }

    // every input is loaded and checked before the first artifact is written
    auto sources = load_sources(sources_path);
    auto rules = rules_path.empty() ? std::vector<AliasRule>{} : load_rules(rules_path);
    auto vocab = build_vocabulary(sources, rules);
    if (!opt.expand_url.empty()) std::filesystem::create_directories(opt.out);
    auto expander = make_expander(opt.templates, opt.expand_url, opt.out / "caption_cache.json");
    auto records = build_manifest(sources, vocab, *expander);
    validate_manifest(records, vocab);
    for (const auto & r : records) {
        if (!std::filesystem::is_regular_file(r.clip_path))
            throw data_error("record '" + r.id + "': missing clip file " + r.clip_path);
        if (!r.mask_path.empty() && !std::filesystem::is_regular_file(r.mask_path))
            throw data_error("record '" + r.id + "': missing mask file " + r.mask_path);
    }

    std::filesystem::create_directories(opt.out);
    write_manifest(records, opt.out / "manifest.tsv", opt.seed);
    write_vocabulary(vocab, opt.out / "vocab.json", opt.seed);
    write_chat_file(records, opt.out / "chat.txt", opt.background_slot,
                    effective_prompt(opt.prompt));

    int64_t samples = 0;
    out << table_row("dataset", "classes", "samples") << "\n";
    for (const auto & s : sources) {
        out << table_row(s.name, s.action_labels.size(), s.sample_count) << "\n";
        samples += s.sample_count;
    }
    out << table_row("total (unified)", vocab.classes.size(), samples) << "\n\n";
    out << "manifest: " << (opt.out / "manifest.tsv").string() << " (" << records.size()
        << " records)\n";
    out << "vocabulary: " << (opt.out / "vocab.json").string() << " (" << vocab.classes.size()
        << " classes)\n";
    out << "chat: " << (opt.out / "chat.txt").string() << "\n";
    out << "seed: " << opt.seed << "\n";
}

void cmd_mask(const MaskOptions & opt, std::ostream & out) {
    if (opt.clip.empty() || opt.masks.empty() || opt.out.empty())
        throw usage_error("mask: --clip, --masks, and --out are required");
    if ((opt.height > 0) != (opt.width > 0))
        throw usage_error("mask: --height and --width go together");

    auto clip = load_clip(opt.clip);
    auto masks = load_masks(opt.masks);
    if (opt.frames > 0) {
        auto idx = sample_frames(clip.t, opt.frames);
        clip = take_frames(clip, idx);
        masks = take_frames(masks, idx);
    }
    auto streams = apply_masks(clip, masks);
    if (opt.height > 0) {
        streams.p1 = letterbox(streams.p1, opt.height, opt.width);
        streams.p2 = letterbox(streams.p2, opt.height, opt.width);
        streams.bg = letterbox(streams.bg, opt.height, opt.width);
    }

    std::filesystem::create_directories(opt.out);
    const std::pair<const char *, const FrameSequence *> outs[] = {
        {"p1.rvid", &streams.p1}, {"p2.rvid", &streams.p2}, {"bg.rvid", &streams.bg}};
    for (const auto & [name, seq] : outs) {
        save_clip(*seq, opt.out / name);
        out << name << ": " << seq->t << "x" << seq->h << "x" << seq->w << "\n";
    }
}

void cmd_train(const TrainOptions & opt, std::ostream & out) {
    if (opt.manifest.empty()) throw usage_error("train: --manifest is required");
    if (opt.out.empty()) throw usage_error("train: --out is required");
    if (!opt.resume.empty() && opt.tokenizer.empty())
        throw usage_error("train: --resume needs the --tokenizer saved with the checkpoint");
    if (!opt.resume.empty() && !opt.model_config.empty())
        throw usage_error("train: --model-config conflicts with --resume");

    TrainConfig tcfg;
    if (!opt.config.empty()) tcfg = TrainConfig::from_json(slurp(opt.config));
    if (opt.seed) tcfg.seed = *opt.seed;
    if (opt.steps) tcfg.steps = *opt.steps;
    if (opt.lr) tcfg.lr = *opt.lr;
    if (opt.batch_size) tcfg.batch_size = *opt.batch_size;
    if (opt.checkpoint_interval) tcfg.checkpoint_interval = *opt.checkpoint_interval;
    tcfg.validate();

    auto records = read_manifest(opt.manifest);
    if (records.empty()) throw data_error(opt.manifest.string() + ": manifest has no records");

    std::string prompt = effective_prompt(opt.prompt);

    std::optional<OvhhirModel> model;
    if (!opt.resume.empty()) {
        model.emplace(load_model(opt.resume, opt.tokenizer));
    } else {
        std::vector<std::string> texts;
        texts.push_back(prompt);
        for (const auto & r : records) texts.push_back(r.soft_caption);
        Tokenizer tok = Tokenizer::build(texts);

        ModelConfig mcfg;
        if (!opt.model_config.empty()) {
            // lm.vocab always comes from the data, whatever the file says
            try {
                json j = json::parse(slurp(opt.model_config));
                j["lm"]["vocab"] = tok.size();
                mcfg = ModelConfig::from_json(j.dump());
            } catch (const json::exception & e) {
                throw data_error("bad model config " + opt.model_config.string() + ": " +
                                 e.what());
            }
        } else {
            mcfg.frames_per_clip = tcfg.frames_per_clip;
            mcfg.background_branch = tcfg.background_branch;
            mcfg.lm.vocab = tok.size();
        }
        model.emplace(std::move(mcfg), std::move(tok), tcfg.seed);
    }
    if (opt.config.empty()) {
        // the model is authoritative unless a train config insists otherwise
        tcfg.frames_per_clip = model->config().frames_per_clip;
        tcfg.background_branch = model->config().background_branch;
    }
    Trainer trainer(*model, tcfg); // cross-checks the two configs up front

    // frozen features are a pure function of the weights: encode once,
    // reuse across every epoch
    std::vector<TrainExample> examples;
    examples.reserve(records.size());
    for (const auto & r : records) {
        auto clip = load_clip(r.clip_path);
        TrainExample ex;
        ex.id = r.id;
        ex.record = chat_record_for(r, model->config().background_branch, prompt);
        ex.tokens = model->encode_clip(clip, masks_for(r, clip));
        examples.push_back(std::move(ex));
    }

    std::filesystem::create_directories(opt.out);
    model->tokenizer().save(opt.out / "tokenizer.json");
    write_text(opt.out / "train_config.json", tcfg.to_json() + "\n");

    std::ofstream log(opt.out / "train_log.txt", std::ios::binary);
    if (!log) throw data_error("cannot write " + (opt.out / "train_log.txt").string());
    auto ckpt_path = opt.out / "checkpoint.ckpt";
    auto on_checkpoint = [&](int64_t step) {
        char extra[64];
        std::snprintf(extra, sizeof extra, "{\"step\": %lld}", static_cast<long long>(step));
        model->save(ckpt_path, extra);
    };

    auto entries = trainer.run(examples, &log, on_checkpoint);

    out << "records: " << examples.size() << "  vocab: " << model->tokenizer().size() << "\n";
    if (entries.empty())
        out << "no optimization steps requested\n";
    else
        out << "steps: " << entries.size() << "  initial loss: " << fmt_loss(entries.front().loss)
            << "  final loss: " << fmt_loss(entries.back().loss) << "\n";
    out << "checkpoint: " << ckpt_path.string() << "\n";
    out << "seed: " << tcfg.seed << "\n";
}

void cmd_eval(const EvalOptions & opt, std::ostream & out) {
    if (opt.manifest.empty() || opt.checkpoint.empty() || opt.tokenizer.empty() ||
        opt.vocab.empty() || opt.out.empty())
        throw usage_error(
            "eval: --manifest, --checkpoint, --tokenizer, --vocab, and --out are required");
    if (opt.open_set && opt.unseen.empty())
        throw usage_error("eval: open-set mode needs --unseen <class list file>");
    if (!opt.open_set && !opt.unseen.empty())
        throw usage_error("eval: --unseen requires --open-set");
    if (!opt.open_set && opt.restrict_to_seen)
        throw usage_error("eval: --restrict-to-seen requires --open-set");
    if (opt.max_new_tokens < 1) throw usage_error("eval: --max-new-tokens must be positive");

    OvhhirModel model = load_model(opt.checkpoint, opt.tokenizer);
    uint64_t seed = checkpoint_seed(opt.checkpoint);
    auto vocab = read_vocabulary(opt.vocab);
    auto records = read_manifest(opt.manifest);
    if (!opt.source.empty()) {
        std::erase_if(records, [&](const InteractionRecord & r) { return r.source != opt.source; });
        if (records.empty())
            throw data_error(opt.manifest.string() + ": no records from source '" + opt.source +
                             "'");
    }
    if (records.empty()) throw data_error(opt.manifest.string() + ": manifest has no records");

    std::string prompt = effective_prompt(opt.prompt);
    GenerateConfig gen;
    gen.max_new_tokens = opt.max_new_tokens;

    std::vector<std::string> generated;
    generated.reserve(records.size());
    for (const auto & r : records) {
        auto clip = load_clip(r.clip_path);
        auto tokens = model.encode_clip(clip, masks_for(r, clip));
        auto chat = chat_record_for(r, model.config().background_branch, prompt);
        generated.push_back(model.generate(chat, tokens, gen));
    }

    auto expander = make_expander(opt.templates, "", opt.out / "caption_cache.json");
    auto canonical = [&](const std::string & cls) { return standardize_label(cls, *expander); };

    ClassifierPromptSpec spec;
    QuoteEchoLM lm;
    HashedEmbedder emb;

    EvalReport report;
    if (!opt.open_set) {
        std::vector<std::string> canonicals;
        canonicals.reserve(vocab.classes.size());
        for (const auto & c : vocab.classes) canonicals.push_back(canonical(c));
        std::vector<EvalItem> items;
        for (size_t i = 0; i < records.size(); ++i)
            items.push_back({records[i].id, generated[i], records[i].soft_caption,
                             records[i].canonical_class});
        report = score_captions(items, vocab.classes, canonicals, spec, lm, emb);
    } else {
        auto unseen = read_class_lines(opt.unseen);
        std::map<std::string, std::string> canonicals;
        for (const auto & c : vocab.classes) canonicals[c] = canonical(c);
        for (const auto & c : unseen) canonicals[c] = canonical(c);
        std::vector<OpenSetItem> items;
        for (size_t i = 0; i < records.size(); ++i)
            items.push_back(
                {records[i].id, generated[i], records[i].soft_caption, records[i].hard_label});
        report = open_set_eval(items, vocab.classes, unseen, canonicals, spec, lm, emb,
                               opt.restrict_to_seen);
    }

    std::filesystem::create_directories(opt.out);
    std::ostringstream gens;
    gens << "# ovhhir-generations v1\n# seed=" << seed << "\n";
    for (size_t i = 0; i < records.size(); ++i)
        gens << records[i].id << '\t' << one_line(generated[i]) << '\t'
             << one_line(records[i].soft_caption) << '\n';
    write_text(opt.out / "generations.tsv", gens.str());

    json j = json::parse(report.to_json());
    j["seed"] = seed;
    write_text(opt.out / "report.json", j.dump(2) + "\n");
    write_text(opt.out / "report.txt",
               "# seed=" + std::to_string(seed) + "\n" + report.to_table());

    out << report.to_table();
    out << "\nreport: " << (opt.out / "report.json").string() << ", "
        << (opt.out / "report.txt").string() << "\n";
}

void cmd_generate(const GenerateOptions & opt, std::ostream & out) {
    if (opt.checkpoint.empty() || opt.tokenizer.empty() || opt.clip.empty())
        throw usage_error("generate: --checkpoint, --tokenizer, and --clip are required");
    if (opt.max_new_tokens < 1) throw usage_error("generate: --max-new-tokens must be positive");
    if (opt.top_k < 0) throw usage_error("generate: --top-k must be >= 0");

    OvhhirModel model = load_model(opt.checkpoint, opt.tokenizer);
    auto clip = load_clip(opt.clip);
    MaskSet masks = opt.masks.empty() ? empty_masks(clip) : load_masks(opt.masks);
    auto tokens = model.encode_clip(clip, masks);

    ChatRecord rec;
    std::string prompt = trim(effective_prompt(opt.prompt));
    if (!prompt.empty()) rec.segments.push_back(ChatSegment::make_text(prompt + " "));
    rec.segments.push_back(ChatSegment::make_slot(StreamId::P1));
    rec.segments.push_back(ChatSegment::make_slot(StreamId::P2));
    if (model.config().background_branch)
        rec.segments.push_back(ChatSegment::make_slot(StreamId::BG));

    GenerateConfig gen;
    gen.max_new_tokens = opt.max_new_tokens;
    gen.top_k = opt.top_k;
    gen.temperature = opt.temperature;
    std::optional<Rng> sampler;
    if (opt.top_k > 0) sampler.emplace(opt.seed);

    out << model.generate(rec, tokens, gen, sampler ? &*sampler : nullptr) << "\n";
}

int run_cli(int argc, const char * const * argv, std::ostream & out, std::ostream & err) {
    CLI::App app{"ovhhir: open-vocabulary human interaction recognition at desk scale"};
    app.require_subcommand(1);
    app.footer("Environment: OVHHIR_SEED, OVHHIR_OUT, and OVHHIR_CONFIG mirror --seed, --out, "
               "and --config.");

    BuildDataOptions bopt;
    auto * build = app.add_subcommand(
        "build-data", "unify sources into a manifest, vocabulary, and chat file");
    build->add_option("--sources", bopt.sources, "source descriptor json");
    build->add_option("--rules", bopt.rules, "label merge rules json");
    build->add_option("--templates", bopt.templates, "label -> caption tsv");
    build->add_option("--expand-url", bopt.expand_url, "caption expansion service base url");
    build->add_option("--out,-o", bopt.out, "output directory")
        ->required()
        ->envname("OVHHIR_OUT");
    build->add_option("--seed", bopt.seed, "seed echoed into the artifacts")
        ->envname("OVHHIR_SEED");
    build->add_flag("--background,!--no-background", bopt.background_slot,
                    "emit a background slot in chat records");
    build->add_flag("--synthetic", bopt.synthetic,
                    "generate the built-in demo corpus under <out>/corpus");
    build->add_option("--prompt", bopt.prompt, "chat question in front of the stream slots");
    build->callback([&] { cmd_build_data(bopt, out); });

    MaskOptions mopt;
    auto * mask = app.add_subcommand("mask", "split one clip into person/background streams");
    mask->add_option("--clip", mopt.clip, "rvid clip")->required();
    mask->add_option("--masks", mopt.masks, "rmsk mask file")->required();
    mask->add_option("--out,-o", mopt.out, "output directory")
        ->required()
        ->envname("OVHHIR_OUT");
    mask->add_option("--frames", mopt.frames, "uniformly sample this many frames (0 = all)");
    mask->add_option("--height", mopt.height, "letterbox height (0 = keep)");
    mask->add_option("--width", mopt.width, "letterbox width (0 = keep)");
    mask->callback([&] { cmd_mask(mopt, out); });

    TrainOptions topt;
    auto * train = app.add_subcommand("train", "fit the learnable branches on a manifest");
    train->add_option("--manifest", topt.manifest, "manifest from build-data")->required();
    train->add_option("--out,-o", topt.out, "output directory")
        ->required()
        ->envname("OVHHIR_OUT");
    train->add_option("--config", topt.config, "train config json")->envname("OVHHIR_CONFIG");
    train->add_option("--model-config", topt.model_config, "model config json");
    train->add_option("--resume", topt.resume, "checkpoint to continue from");
    train->add_option("--tokenizer", topt.tokenizer, "tokenizer json (required with --resume)");
    train->add_option("--seed", topt.seed, "override the config seed")->envname("OVHHIR_SEED");
    train->add_option("--steps", topt.steps, "override the step count");
    train->add_option("--lr", topt.lr, "override the learning rate");
    train->add_option("--batch-size", topt.batch_size, "override the batch size");
    train->add_option("--checkpoint-interval", topt.checkpoint_interval,
                      "also save every N steps");
    train->add_option("--prompt", topt.prompt, "chat question in front of the stream slots");
    train->callback([&] { cmd_train(topt, out); });

    EvalOptions eopt;
    auto * eval = app.add_subcommand("eval", "score generated captions against a manifest");
    eval->add_option("--manifest", eopt.manifest, "eval slice manifest")->required();
    eval->add_option("--checkpoint", eopt.checkpoint, "model checkpoint")->required();
    eval->add_option("--tokenizer", eopt.tokenizer, "tokenizer json")->required();
    eval->add_option("--vocab", eopt.vocab, "vocabulary json from build-data")->required();
    eval->add_option("--templates", eopt.templates, "label -> caption tsv for the classifier");
    eval->add_option("--out,-o", eopt.out, "output directory")
        ->required()
        ->envname("OVHHIR_OUT");
    eval->add_flag("--open-set", eopt.open_set, "classify over seen + unseen classes");
    eval->add_option("--unseen", eopt.unseen, "unseen class list, one per line");
    eval->add_flag("--restrict-to-seen", eopt.restrict_to_seen,
                   "closed-vocabulary baseline for open-set runs");
    eval->add_option("--source", eopt.source, "keep records of this source only");
    eval->add_option("--max-new-tokens", eopt.max_new_tokens, "generation budget per record");
    eval->add_option("--prompt", eopt.prompt, "chat question in front of the stream slots");
    eval->callback([&] { cmd_eval(eopt, out); });

    GenerateOptions gopt;
    auto * gen = app.add_subcommand("generate", "caption one clip with a trained checkpoint");
    gen->add_option("--checkpoint", gopt.checkpoint, "model checkpoint")->required();
    gen->add_option("--tokenizer", gopt.tokenizer, "tokenizer json")->required();
    gen->add_option("--clip", gopt.clip, "rvid clip")->required();
    gen->add_option("--masks", gopt.masks, "rmsk mask file (omit for background-only)");
    gen->add_option("--prompt", gopt.prompt, "chat question in front of the stream slots");
    gen->add_option("--max-new-tokens", gopt.max_new_tokens, "generation budget");
    gen->add_option("--top-k", gopt.top_k, "sample from the top k tokens (0 = greedy)");
    gen->add_option("--temperature", gopt.temperature, "top-k sampling temperature");
    gen->add_option("--seed", gopt.seed, "sampler seed")->envname("OVHHIR_SEED");
    gen->callback([&] { cmd_generate(gopt, out); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp & e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp & e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForVersion & e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError & e) {
        app.exit(e, out, err);
        return 2;
    } catch (const usage_error & e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const data_error & e) {
        err << "data error: " << e.what() << "\n";
        return 3;
    } catch (const config_error & e) {
        err << "config error: " << e.what() << "\n";
        return 3;
    } catch (const numeric_error & e) {
        err << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception & e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace ovhhir
