#include "difftrace/dataset.hpp"

#include <fstream>
#include <sstream>

#include "difftrace/serialize.hpp"

namespace difftrace {

namespace {

json model_to_json(const PropagationModel& m) {
    json j;
    j["kind"] = m.kind_name();
    j["mode"] = m.mode == PropagationModel::ParameterMode::Homogeneous ? "hom" : "het";
    if (m.mode == PropagationModel::ParameterMode::Homogeneous) {
        j["p"] = m.p;
    } else {
        j["low"] = m.low;
        j["high"] = m.high;
    }
    if (m.kind == PropagationModel::Kind::SIR) j["recovery"] = m.recovery_rate;
    j["max_steps"] = m.max_steps;
    return j;
}

PropagationModel model_from_json(const json& j) {
    PropagationModel m;
    m.kind = PropagationModel::kind_from_name(j.at("kind").get<std::string>());
    m.mode = j.at("mode").get<std::string>() == "hom"
                 ? PropagationModel::ParameterMode::Homogeneous
                 : PropagationModel::ParameterMode::Heterogeneous;
    if (j.contains("p")) m.p = j["p"].get<double>();
    if (j.contains("low")) m.low = j["low"].get<double>();
    if (j.contains("high")) m.high = j["high"].get<double>();
    m.recovery_rate = j.value("recovery", 0.0);
    m.max_steps = j.value("max_steps", 50);
    return m;
}

}  // namespace

std::string model_to_string(const PropagationModel& m) {
    return model_to_json(m).dump();
}

void save_dataset(const std::vector<Episode>& episodes, const std::string& path) {
    std::ostringstream out;
    for (const auto& ep : episodes) {
        json j;
        j["episode_id"] = ep.episode_id;
        j["graph_id"] = ep.graph_id;
        j["model"] = model_to_json(ep.model);
        j["seed"] = ep.seed;
        j["sources"] = ep.sources;
        json avail = json::array();
        for (const auto& snap : ep.available) {
            json s;
            s["t"] = snap.t;
            s["infected"] = snap.infected_ids();
            avail.push_back(std::move(s));
        }
        j["available"] = std::move(avail);
        j["node_count"] = ep.available.empty() ? 0 : static_cast<int>(ep.available[0].state.size());
        j["fallback"] = ep.fallback_used;
        j["attempts"] = ep.attempts;
        out << j.dump() << '\n';
    }
    atomic_write(path, out.str());
}

std::vector<Episode> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset: " + path);
    std::vector<Episode> episodes;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": bad episode record: " + e.what());
        }
        Episode ep;
        ep.episode_id = j.at("episode_id").get<std::int64_t>();
        ep.graph_id = j.value("graph_id", "");
        ep.model = model_from_json(j.at("model"));
        ep.seed = j.at("seed").get<std::uint64_t>();
        ep.sources = j.at("sources").get<std::vector<int>>();
        const int n = j.at("node_count").get<int>();
        for (const auto& s : j.at("available")) {
            Snapshot snap;
            snap.t = s.at("t").get<int>();
            snap.state.assign(n, 0);
            for (int id : s.at("infected").get<std::vector<int>>()) {
                if (id < 0 || id >= n)
                    throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                             ": infected id out of range");
                snap.state[id] = 1;
            }
            ep.available.push_back(std::move(snap));
        }
        ep.fallback_used = j.value("fallback", false);
        ep.attempts = j.value("attempts", 1);
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

void save_manifest(const Graph& g, const GenerateConfig& cfg, int episode_count,
                   const std::string& path) {
    json j;
    j["version"] = kArtifactVersion;
    j["graph_checksum"] = g.checksum();
    j["graph_id"] = cfg.graph_id;
    j["node_count"] = g.node_count();
    j["edge_count"] = g.edge_count();
    j["original_ids"] = g.original_ids();
    j["episode_count"] = episode_count;
    j["master_seed"] = cfg.master_seed;
    json c;
    c["model"] = json::parse(model_to_string(cfg.model));
    c["source_fraction"] = cfg.source_fraction;
    c["n_prime"] = cfg.n_prime;
    c["max_attempts"] = cfg.max_attempts;
    j["config"] = std::move(c);
    j["config_hash"] = to_hex(fnv1a64(j["config"].dump()));
    atomic_write(path, j.dump(2) + "\n");
}

}  // namespace difftrace
