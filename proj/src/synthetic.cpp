#include "ovhhir/synthetic.hpp"

#include "json.hpp"

#include <fstream>

namespace ovhhir {

using nlohmann::json;

namespace {

struct Blueprint {
    const char * label;
    const char * caption;
    int64_t frames;
};

// captions are distinct, lowercase, sentence-like, and contain their own
// class word exactly once (and never the other class word), so both the
// tokenizer round-trip and name-scan classification stay exact
const Blueprint BLUEPRINTS[] = {
    {"hug", "two people hug warmly in the hallway.", 12},
    {"hug", "a tall person gives a gentle hug to a friend.", 16},
    {"hug", "an old friend runs over for a quick hug.", 20},
    {"hug", "the couple share a long hug near the door.", 40},
    {"punch", "a boxer throws a sharp punch at the pad.", 24},
    {"punch", "one person lands a sudden punch during the fight.", 28},
    {"punch", "an angry man swings a wild punch at his rival.", 32},
    {"punch", "the fighter jabs a fast punch into the bag.", 18},
};

void fill_box(FrameSequence & clip, MaskSet & masks, std::vector<uint8_t> & plane, int64_t f,
              int64_t y0, int64_t y1, int64_t x0, int64_t x1, uint8_t r, uint8_t gcol,
              uint8_t b) {
    for (int64_t y = y0; y < y1; ++y) {
        for (int64_t x = x0; x < x1; ++x) {
            clip.at(f, y, x, 0) = r;
            clip.at(f, y, x, 1) = gcol;
            clip.at(f, y, x, 2) = b;
            plane[size_t((f * masks.h + y) * masks.w + x)] = 1;
        }
    }
}

} // namespace

std::vector<SyntheticRecord> make_synthetic_records(const SyntheticSpec & spec) {
    if (spec.height < 48 || spec.width < 64)
        throw config_error("synthetic clips need at least 48x64 frames");
    Rng root(spec.seed);
    std::vector<SyntheticRecord> out;
    std::map<std::string, int> counters;
    for (const Blueprint & bp : BLUEPRINTS) {
        SyntheticRecord rec;
        int n = counters[bp.label]++;
        rec.id = std::string(bp.label) + "_" + std::to_string(n);
        rec.label = bp.label;
        rec.caption = bp.caption;

        Rng rng = root.fork(rec.id);
        FrameSequence & clip = rec.clip;
        clip.t = bp.frames;
        clip.h = spec.height;
        clip.w = spec.width;
        clip.pixels.assign(size_t(clip.t * clip.h * clip.w * 3), 0);
        MaskSet & masks = rec.masks;
        masks.t = clip.t;
        masks.h = clip.h;
        masks.w = clip.w;
        masks.person1.assign(size_t(clip.t * clip.h * clip.w), 0);
        masks.person2.assign(size_t(clip.t * clip.h * clip.w), 0);

        // textured background so the bg stream carries signal
        int64_t px = rng.uniform_int(0, 31);
        int64_t py = rng.uniform_int(0, 31);
        for (int64_t f = 0; f < clip.t; ++f)
            for (int64_t y = 0; y < clip.h; ++y)
                for (int64_t x = 0; x < clip.w; ++x) {
                    clip.at(f, y, x, 0) = uint8_t((x * 3 + px + f) % 211);
                    clip.at(f, y, x, 1) = uint8_t((y * 5 + py) % 199);
                    clip.at(f, y, x, 2) = uint8_t((x + y + f * 2) % 251);
                }

        uint8_t c1r = uint8_t(rng.uniform_int(120, 255));
        uint8_t c1g = uint8_t(rng.uniform_int(0, 120));
        uint8_t c2b = uint8_t(rng.uniform_int(120, 255));
        bool lunge = rec.label == std::string("punch");
        for (int64_t f = 0; f < clip.t; ++f) {
            // person 1 drifts right (and lunges for the punch class), person 2
            // drifts left; boxes stay disjoint by construction
            int64_t step = lunge ? (f % 8) : (f % 4);
            int64_t x1 = 4 + step;
            int64_t x2 = 44 - (f % 4);
            int64_t dy = f % 3;
            fill_box(clip, masks, masks.person1, f, 8 + dy, 40 + dy, x1, x1 + 14, c1r, c1g, 40);
            fill_box(clip, masks, masks.person2, f, 10, 42, x2, x2 + 14, 30, c1g, c2b);
        }
        out.push_back(std::move(rec));
    }
    return out;
}

std::filesystem::path write_synthetic_corpus(const std::filesystem::path & dir,
                                             const SyntheticSpec & spec) {
    auto records = make_synthetic_records(spec);
    std::filesystem::create_directories(dir / "clips");
    std::filesystem::create_directories(dir / "masks");

    json src;
    src["name"] = "synthetic";
    src["sample_count"] = int64_t(records.size());
    src["labels"] = json::array({"hug", "punch"});
    src["clips"] = json::array();
    for (const auto & rec : records) {
        std::string clip_rel = "clips/" + rec.id + ".rvid";
        std::string mask_rel = "masks/" + rec.id + ".rmsk";
        save_clip(rec.clip, dir / clip_rel);
        save_masks(rec.masks, dir / mask_rel);
        src["clips"].push_back({{"id", rec.id},
                                {"label", rec.label},
                                {"clip", clip_rel},
                                {"mask", mask_rel},
                                {"caption", rec.caption}});
    }

    json doc;
    doc["sources"] = json::array({src});
    auto sources_path = dir / "sources.json";
    std::ofstream out(sources_path);
    out << doc.dump(2) << "\n";
    if (!out) throw data_error("cannot write " + sources_path.string());

    std::ofstream rules(dir / "rules.json");
    rules << "{\"rules\": []}\n";
    if (!rules) throw data_error("cannot write " + (dir / "rules.json").string());
    return sources_path;
}

} // namespace ovhhir
