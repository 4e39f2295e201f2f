#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "difftrace/graph.hpp"

namespace difftrace {

struct PropagationModel {
    enum class Kind { IC, SI, SIR };
    enum class ParameterMode { Homogeneous, Heterogeneous };

    Kind kind = Kind::IC;
    ParameterMode mode = ParameterMode::Heterogeneous;
    double p = 0.1;           // homogeneous activation probability
    double low = 0.05;        // heterogeneous per-edge draw range
    double high = 0.15;
    double recovery_rate = 0.0;  // SIR only
    int max_steps = 50;          // SI/SIR chain cap

    void validate() const;
    std::string kind_name() const;
    static Kind kind_from_name(const std::string& name);
};

/// Binary infection state of every node at one discrete timestamp.
struct Snapshot {
    int t = 0;
    std::vector<std::uint8_t> state;  // 1 = observed infected

    int infected_count() const;
    std::vector<int> infected_ids() const;
};

/// One simulated propagation. The full chain is kept only in memory;
/// dataset files carry the available subsequence.
struct Episode {
    std::int64_t episode_id = 0;
    std::string graph_id;
    std::vector<int> sources;             // ascending
    std::vector<Snapshot> chain;          // empty after loading from disk
    std::vector<Snapshot> available;      // strictly increasing timestamps
    PropagationModel model;
    std::uint64_t seed = 0;
    bool fallback_used = false;           // chain too short for the requested n'
    int attempts = 1;
    // ground-truth per-edge probabilities, indexed like Graph::edges();
    // never serialized, never fed to the model
    std::vector<double> hidden_edge_prob;

    int zeta() const { return static_cast<int>(available.size()); }
};

/// Records every activation attempt an IC/SI/SIR run makes; tests use it
/// to check the one-shot rule and parameter draw ranges.
struct AttemptLog {
    struct Attempt {
        int step, from, to;
        bool success;
    };
    std::vector<Attempt> attempts;
    std::vector<double> edge_prob;  // per Graph::edges() index
};

/// Runs one propagation from the given sources. Snapshot 0 holds exactly
/// the sources; the chain stops when no new infection occurs (IC), at
/// saturation, or at model.max_steps (SI/SIR).
std::vector<Snapshot> simulate(const Graph& g, const PropagationModel& model,
                               const std::vector<int>& sources, std::uint64_t seed,
                               AttemptLog* log = nullptr);

/// n_prime distinct timestamps sampled uniformly without replacement,
/// ascending. Chains of length <= n_prime fall back to the whole chain
/// minus the last step; *fallback_used reports that.
std::vector<Snapshot> sample_available(const std::vector<Snapshot>& chain, int n_prime,
                                       std::uint64_t seed, bool* fallback_used = nullptr);

struct GenerateConfig {
    PropagationModel model;
    int episode_count = 1000;
    double source_fraction = 0.1;
    int n_prime = 3;
    std::uint64_t master_seed = 0;
    std::string graph_id;
    int max_attempts = 100;  // re-draws per episode before giving up
};

/// episode_count independent episodes; sources are ceil(fraction * |V|)
/// nodes sampled uniformly from the largest connected component, and each
/// episode's seed derives from (master_seed, index).
std::vector<Episode> generate_dataset(const Graph& g, const GenerateConfig& cfg);

}  // namespace difftrace
