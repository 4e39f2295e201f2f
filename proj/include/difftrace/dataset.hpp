#pragma once

#include <string>
#include <vector>

#include "difftrace/graph.hpp"
#include "difftrace/simulate.hpp"

namespace difftrace {

inline constexpr const char* kArtifactVersion = "difftrace-1";

/// One episode per line; only the available snapshots are stored.
void save_dataset(const std::vector<Episode>& episodes, const std::string& path);
std::vector<Episode> load_dataset(const std::string& path);

/// Records everything needed to regenerate the dataset bit-identically.
void save_manifest(const Graph& g, const GenerateConfig& cfg, int episode_count,
                   const std::string& path);

std::string model_to_string(const PropagationModel& m);

}  // namespace difftrace
