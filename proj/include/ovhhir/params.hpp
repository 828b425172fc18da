#pragma once

#include "ovhhir/tensor.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ovhhir {

// Named weight registry. References stay valid for the store's lifetime.
class ParamStore {
  public:
    Parameter & add(const std::string & name, Tensor value, bool trainable);
    Parameter & at(const std::string & name);
    const Parameter & at(const std::string & name) const;
    bool has(const std::string & name) const { return params_.count(name) != 0; }

    // name-sorted
    std::vector<Parameter *> all();
    std::vector<const Parameter *> all() const;

    size_t size() const { return params_.size(); }
    int64_t numel() const;
    void zero_grads();

    // Covers names, shapes and raw values of every parameter whose name
    // starts with `prefix`. The frozen-weight contract is checked with this.
    uint64_t checksum(const std::string & prefix = "") const;

  private:
    std::map<std::string, Parameter> params_;
};

// Checkpoint container: magic, little-endian u64 header length, JSON header
// (metadata echo plus an array directory with per-array checksums), then the
// raw double arrays in directory order.
void save_checkpoint(const ParamStore & store, const std::filesystem::path & path,
                     const std::string & meta_json);

// Loads into an already-built store; set mismatches, shape mismatches and
// checksum failures are errors naming the parameter. Returns the metadata
// JSON echo.
std::string load_checkpoint(ParamStore & store, const std::filesystem::path & path);

// Header metadata without touching any weights.
std::string read_checkpoint_meta(const std::filesystem::path & path);

} // namespace ovhhir
