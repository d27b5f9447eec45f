#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "pyraflow/pyramid.hpp"

namespace pyraflow {

struct CheckpointMeta {
    std::uint32_t epoch = 0;
    int level = -1;  // -1: no level in progress
    float train_loss = 0.0f;
    float val_epe = 0.0f;
};

// Exact on-disk size of the checkpoint for this net, in bytes.
std::size_t checkpoint_size_bytes(const PyramidNet& net);

void save_checkpoint(const PyramidNet& net, const CheckpointMeta& meta,
                     const std::string& path);
std::pair<PyramidNet, CheckpointMeta> load_checkpoint(const std::string& path);

}  // namespace pyraflow
