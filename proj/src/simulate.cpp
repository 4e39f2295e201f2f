#include "difftrace/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "difftrace/rng.hpp"

namespace difftrace {

void PropagationModel::validate() const {
    auto prob = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!prob(p) || !prob(low) || !prob(high) || low > high)
        throw std::invalid_argument("PropagationModel: probabilities must satisfy 0 <= low <= high <= 1");
    if (!prob(recovery_rate))
        throw std::invalid_argument("PropagationModel: recovery_rate must be in [0,1]");
    if (kind != Kind::SIR && recovery_rate != 0.0)
        throw std::invalid_argument("PropagationModel: recovery_rate only valid for SIR");
    if (max_steps < 1) throw std::invalid_argument("PropagationModel: max_steps must be >= 1");
}

std::string PropagationModel::kind_name() const {
    switch (kind) {
        case Kind::IC: return "IC";
        case Kind::SI: return "SI";
        case Kind::SIR: return "SIR";
    }
    return "?";
}

PropagationModel::Kind PropagationModel::kind_from_name(const std::string& name) {
    if (name == "IC" || name == "ic") return Kind::IC;
    if (name == "SI" || name == "si") return Kind::SI;
    if (name == "SIR" || name == "sir") return Kind::SIR;
    throw std::invalid_argument("unknown propagation model: " + name);
}

int Snapshot::infected_count() const {
    int c = 0;
    for (auto s : state) c += s;
    return c;
}

std::vector<int> Snapshot::infected_ids() const {
    std::vector<int> ids;
    for (int i = 0; i < static_cast<int>(state.size()); ++i)
        if (state[i]) ids.push_back(i);
    return ids;
}

namespace {

std::vector<double> draw_edge_probabilities(const Graph& g, const PropagationModel& m, Rng& rng) {
    std::vector<double> probs(g.edges().size());
    if (m.mode == PropagationModel::ParameterMode::Homogeneous) {
        std::fill(probs.begin(), probs.end(), m.p);
    } else {
        for (auto& x : probs) x = rng.uniform(m.low, m.high);
    }
    return probs;
}

// per-neighbor probability lookup: edge index per adjacency entry
std::vector<std::vector<std::pair<int, int>>> neighbor_edge_index(const Graph& g) {
    std::vector<std::vector<std::pair<int, int>>> out(g.node_count());
    for (int e = 0; e < g.edge_count(); ++e) {
        auto [u, v] = g.edges()[e];
        out[u].emplace_back(v, e);
        out[v].emplace_back(u, e);
    }
    return out;
}

}  // namespace

std::vector<Snapshot> simulate(const Graph& g, const PropagationModel& model,
                               const std::vector<int>& sources, std::uint64_t seed,
                               AttemptLog* log) {
    model.validate();
    if (sources.empty()) throw std::invalid_argument("simulate: empty source set");
    for (int s : sources)
        if (s < 0 || s >= g.node_count())
            throw std::invalid_argument("simulate: source id out of range");
    {
        auto comp = g.connected_component(sources.front());
        for (int s : sources)
            if (!std::binary_search(comp.begin(), comp.end(), s))
                throw std::invalid_argument("simulate: sources span multiple components");
    }

    const int n = g.node_count();
    Rng rng(seed);
    auto edge_prob = draw_edge_probabilities(g, model, rng);
    if (log) log->edge_prob = edge_prob;
    auto adj = neighbor_edge_index(g);

    // 0 = susceptible, 1 = infected, 2 = recovered (observed as 0)
    std::vector<std::uint8_t> status(n, 0);
    for (int s : sources) status[s] = 1;

    auto record = [&](int t) {
        Snapshot snap;
        snap.t = t;
        snap.state.resize(n);
        for (int i = 0; i < n; ++i) snap.state[i] = (status[i] == 1) ? 1 : 0;
        return snap;
    };

    std::vector<Snapshot> chain;
    chain.push_back(record(0));

    std::vector<int> frontier(sources.begin(), sources.end());  // IC: nodes infected last step
    const bool ic = model.kind == PropagationModel::Kind::IC;
    const bool sir = model.kind == PropagationModel::Kind::SIR;

    auto process_alive = [&] {
        if (sir)  // recovery keeps the state moving while anyone is infected
            return std::any_of(status.begin(), status.end(),
                               [](std::uint8_t s) { return s == 1; });
        // SI fixpoint: no infected node with a susceptible neighbor
        for (int i = 0; i < n; ++i) {
            if (status[i] != 1) continue;
            for (auto [v, e] : adj[i]) {
                (void)e;
                if (status[v] == 0) return true;
            }
        }
        return false;
    };

    for (int t = 1;; ++t) {
        if (!ic && (t > model.max_steps || !process_alive())) break;

        std::vector<int> spreaders;
        if (ic) {
            spreaders = frontier;
        } else {
            for (int i = 0; i < n; ++i)
                if (status[i] == 1) spreaders.push_back(i);
        }

        std::vector<int> newly;
        for (int u : spreaders) {
            for (auto [v, e] : adj[u]) {
                if (status[v] != 0) continue;
                bool hit = rng.bernoulli(edge_prob[e]);
                if (log) log->attempts.push_back({t, u, v, hit});
                if (hit) {
                    status[v] = 1;
                    newly.push_back(v);
                }
            }
        }

        if (sir) {
            // recovery after this step's transmissions; new infections
            // cannot recover in their infection step
            for (int u : spreaders)
                if (status[u] == 1 && rng.bernoulli(model.recovery_rate)) status[u] = 2;
        }

        if (ic) {
            if (newly.empty()) break;
            frontier = newly;
        }
        chain.push_back(record(t));
    }
    return chain;
}

std::vector<Snapshot> sample_available(const std::vector<Snapshot>& chain, int n_prime,
                                       std::uint64_t seed, bool* fallback_used) {
    if (n_prime < 2) throw std::invalid_argument("sample_available: n_prime must be >= 2");
    if (chain.empty()) throw std::invalid_argument("sample_available: empty chain");
    const int len = static_cast<int>(chain.size());
    if (fallback_used) *fallback_used = false;

    std::vector<int> picked;
    if (len > n_prime) {
        Rng rng(seed);
        picked = rng.sample_without_replacement(len, n_prime);
    } else {
        // chain too short: everything but the last step
        if (len - 1 < 2)
            throw std::invalid_argument("sample_available: chain too short even for fallback");
        picked.resize(len - 1);
        for (int i = 0; i < len - 1; ++i) picked[i] = i;
        if (fallback_used) *fallback_used = true;
    }
    std::vector<Snapshot> out;
    out.reserve(picked.size());
    for (int idx : picked) out.push_back(chain[idx]);
    return out;
}

std::vector<Episode> generate_dataset(const Graph& g, const GenerateConfig& cfg) {
    cfg.model.validate();
    if (!(cfg.source_fraction > 0.0 && cfg.source_fraction < 1.0))
        throw std::invalid_argument("generate_dataset: source_fraction must be in (0,1)");
    const int n_sources =
        static_cast<int>(std::ceil(cfg.source_fraction * g.node_count()));
    if (n_sources >= g.node_count())
        throw std::invalid_argument("generate_dataset: source count >= |V|");

    auto component = g.largest_component();
    if (static_cast<int>(component.size()) < n_sources)
        throw std::invalid_argument("generate_dataset: largest component smaller than source count");

    std::vector<Episode> episodes;
    episodes.reserve(cfg.episode_count);
    for (int idx = 0; idx < cfg.episode_count; ++idx) {
        Episode ep;
        ep.episode_id = idx;
        ep.graph_id = cfg.graph_id;
        ep.model = cfg.model;

        bool ok = false;
        for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
            const std::uint64_t seed =
                derive_seed(cfg.master_seed, static_cast<std::uint64_t>(idx) * 1000 + attempt);
            Rng rng(seed);
            std::vector<int> sources;
            {
                auto local = rng.sample_without_replacement(
                    static_cast<int>(component.size()), n_sources);
                sources.reserve(local.size());
                for (int i : local) sources.push_back(component[i]);
                std::sort(sources.begin(), sources.end());
            }
            AttemptLog log;
            auto chain = simulate(g, cfg.model, sources, rng.next_u64(), &log);
            if (static_cast<int>(chain.size()) < 3) continue;  // nothing to observe

            bool fallback = false;
            auto available = sample_available(chain, cfg.n_prime, rng.next_u64(), &fallback);
            ep.sources = std::move(sources);
            ep.chain = std::move(chain);
            ep.available = std::move(available);
            ep.seed = seed;
            ep.fallback_used = fallback;
            ep.attempts = attempt + 1;
            ep.hidden_edge_prob = std::move(log.edge_prob);
            ok = true;
            break;
        }
        if (!ok)
            throw std::runtime_error(
                "generate_dataset: unreachable configuration, episode " + std::to_string(idx) +
                " produced no usable chain after " + std::to_string(cfg.max_attempts) +
                " attempts");
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

}  // namespace difftrace
