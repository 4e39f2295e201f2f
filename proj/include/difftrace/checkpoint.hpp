#pragma once

#include <cstdint>
#include <string>

#include "difftrace/model.hpp"

namespace difftrace {

inline constexpr const char* kCheckpointVersion = "difftrace-ckpt-1";

/// Versioned container with everything needed to rebuild the trained
/// model, including the influence-estimator configuration used as
/// inference-time preprocessing.
struct Checkpoint {
    std::string version = kCheckpointVersion;
    std::string graph_checksum;
    int node_count = 0;
    int topology_width = 0;
    ModelConfig model;
    EstimatorConfig estimator;
    EncoderWeights encoder;
    DecoderWeights decoder;
    std::uint64_t seed = 0;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace difftrace
