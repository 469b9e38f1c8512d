#ifndef SAGAN_CONFIG_HPP
#define SAGAN_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

#include "sagan/data.hpp"
#include "sagan/training.hpp"

namespace sagan::config {

struct KeySpec {
    std::string key;
    std::string def;
    std::string help;
};

// Single source of truth for the flat key=value run configuration.
const std::vector<KeySpec>& schema();

using KV = std::map<std::string, std::string>;

KV defaults();

// Parses `key=value` lines ('#' comments, blank lines ignored). Unknown keys
// are rejected.
KV parse_text(const std::string& text);
KV load_file(const std::string& path);

void set_value(KV& kv, const std::string& key, const std::string& value);

// Deterministic serialization (sorted keys) and its FNV-1a hash.
std::string serialize(const KV& kv);
uint64_t hash(const KV& kv);

train::TrainConfig to_train_config(const KV& kv);
data::SyntheticDomainSpec to_synth_spec(const KV& kv);

int64_t get_int(const KV& kv, const std::string& key);
double get_double(const KV& kv, const std::string& key);
std::string get_string(const KV& kv, const std::string& key);

}  // namespace sagan::config

#endif  // SAGAN_CONFIG_HPP
