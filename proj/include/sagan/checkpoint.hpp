#ifndef SAGAN_CHECKPOINT_HPP
#define SAGAN_CHECKPOINT_HPP

#include <string>
#include <utility>
#include <vector>

#include "sagan/tensor.hpp"

namespace sagan::ckpt {

// One archive per save: named parameter arrays for every network, optimizer
// state, the resolved config (text + hash), and the step counter.
struct Archive {
    uint64_t config_hash = 0;
    int64_t step = 0;
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> entries;

    const Tensor* find(const std::string& name) const;
};

void save(const std::string& path, const Archive& archive);
Archive load(const std::string& path);

}  // namespace sagan::ckpt

#endif  // SAGAN_CHECKPOINT_HPP
