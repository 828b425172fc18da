#include "ovhhir/params.hpp"

#include "json.hpp"

#include <cstring>
#include <fstream>

namespace ovhhir {

using nlohmann::json;

Parameter & ParamStore::add(const std::string & name, Tensor value, bool trainable) {
    if (name.empty()) throw config_error("parameter with empty name");
    auto [it, fresh] = params_.try_emplace(name, name, std::move(value), trainable);
    if (!fresh) throw config_error("parameter '" + name + "' registered twice");
    return it->second;
}

Parameter & ParamStore::at(const std::string & name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw config_error("unknown parameter '" + name + "'");
    return it->second;
}

const Parameter & ParamStore::at(const std::string & name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw config_error("unknown parameter '" + name + "'");
    return it->second;
}

std::vector<Parameter *> ParamStore::all() {
    std::vector<Parameter *> out;
    out.reserve(params_.size());
    for (auto & [_, p] : params_) out.push_back(&p);
    return out;
}

std::vector<const Parameter *> ParamStore::all() const {
    std::vector<const Parameter *> out;
    out.reserve(params_.size());
    for (const auto & [_, p] : params_) out.push_back(&p);
    return out;
}

int64_t ParamStore::numel() const {
    int64_t n = 0;
    for (const auto & [_, p] : params_) n += p.value.numel();
    return n;
}

void ParamStore::zero_grads() {
    for (auto & [_, p] : params_) p.zero_grad();
}

uint64_t ParamStore::checksum(const std::string & prefix) const {
    uint64_t h = FNV64_BASIS;
    for (const auto & [name, p] : params_) {
        if (name.rfind(prefix, 0) != 0) continue;
        h = fnv1a64(name, h);
        h = fnv1a64(p.value.shape.data(), p.value.shape.size() * sizeof(int64_t), h);
        h = fnv1a64(p.value.data.data(), p.value.data.size() * sizeof(double), h);
    }
    return h;
}

// --- checkpoint I/O -------------------------------------------------------

namespace {

constexpr char CKPT_MAGIC[8] = {'O', 'V', 'H', 'H', 'I', 'R', 'C', 'K'};

void write_u64(std::ostream & out, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
    out.write(reinterpret_cast<const char *>(b), 8);
}

uint64_t read_u64(std::istream & in, const std::string & what) {
    unsigned char b[8];
    in.read(reinterpret_cast<char *>(b), 8);
    if (!in) throw data_error("checkpoint truncated in " + what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
    return v;
}

json read_header(std::istream & in, const std::filesystem::path & path) {
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, CKPT_MAGIC, 8) != 0)
        throw data_error(path.string() + " is not a checkpoint (bad magic)");
    uint64_t hlen = read_u64(in, "header length");
    if (hlen > (64ull << 20)) throw data_error("checkpoint header implausibly large");
    std::string raw(hlen, '\0');
    in.read(raw.data(), std::streamsize(hlen));
    if (!in) throw data_error("checkpoint truncated in header");
    try {
        return json::parse(raw);
    } catch (const json::parse_error & e) {
        throw data_error(path.string() + ": corrupt checkpoint header: " + e.what());
    }
}

} // namespace

void save_checkpoint(const ParamStore & store, const std::filesystem::path & path,
                     const std::string & meta_json) {
    json meta;
    try {
        meta = meta_json.empty() ? json::object() : json::parse(meta_json);
    } catch (const json::parse_error & e) {
        throw config_error(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }

    json dir = json::array();
    for (const auto * p : store.all()) {
        dir.push_back({{"name", p->name},
                       {"shape", p->value.shape},
                       {"trainable", p->trainable},
                       {"checksum", hex64(p->value.checksum())}});
    }
    json header = {{"format", "ovhhir-ckpt-v1"}, {"meta", meta}, {"arrays", std::move(dir)}};
    std::string hraw = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write checkpoint: " + path.string());
    out.write(CKPT_MAGIC, 8);
    write_u64(out, hraw.size());
    out.write(hraw.data(), std::streamsize(hraw.size()));
    for (const auto * p : store.all())
        out.write(reinterpret_cast<const char *>(p->value.data.data()),
                  std::streamsize(p->value.data.size() * sizeof(double)));
    if (!out) throw data_error("short write to checkpoint: " + path.string());
}

std::string load_checkpoint(ParamStore & store, const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path.string());
    json header = read_header(in, path);
    if (header.value("format", "") != "ovhhir-ckpt-v1")
        throw data_error(path.string() + ": unsupported checkpoint format '" +
                         header.value("format", "") + "'");

    const auto & arrays = header.at("arrays");
    if (arrays.size() != store.size())
        throw data_error("checkpoint has " + std::to_string(arrays.size()) +
                         " arrays, model has " + std::to_string(store.size()));
    for (const auto & entry : arrays) {
        std::string name = entry.at("name").get<std::string>();
        if (!store.has(name))
            throw data_error("checkpoint array '" + name + "' does not exist in the model");
        Parameter & p = store.at(name);
        auto shape = entry.at("shape").get<std::vector<int64_t>>();
        if (shape != p.value.shape)
            throw data_error("checkpoint array '" + name + "' has shape " + shape_str(shape) +
                             ", model expects " + shape_str(p.value.shape));
        in.read(reinterpret_cast<char *>(p.value.data.data()),
                std::streamsize(p.value.data.size() * sizeof(double)));
        if (!in) throw data_error("checkpoint truncated in array '" + name + "'");
        std::string want = entry.at("checksum").get<std::string>();
        std::string got = hex64(p.value.checksum());
        if (want != got)
            throw data_error("checkpoint array '" + name + "' fails its checksum (header " +
                             want + ", data " + got + ")");
    }
    // trailing junk would mean a concatenation/truncation accident elsewhere
    char extra;
    if (in.read(&extra, 1))
        throw data_error(path.string() + ": trailing bytes after the last array");
    return header.at("meta").dump();
}

std::string read_checkpoint_meta(const std::filesystem::path & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open checkpoint: " + path.string());
    json header = read_header(in, path);
    return header.at("meta").dump();
}

} // namespace ovhhir
