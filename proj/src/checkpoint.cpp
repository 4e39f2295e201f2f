#include "difftrace/checkpoint.hpp"

#include "difftrace/serialize.hpp"

namespace difftrace {

namespace {

json gru_to_json(const GruWeights& w) {
    json j;
    j["w_ih"] = matrix_to_json(w.w_ih);
    j["w_hh"] = matrix_to_json(w.w_hh);
    j["b_ih"] = vector_to_json(w.b_ih);
    j["b_hh"] = vector_to_json(w.b_hh);
    return j;
}

GruWeights gru_from_json(const json& j) {
    GruWeights w;
    w.w_ih = matrix_from_json(j.at("w_ih"));
    w.w_hh = matrix_from_json(j.at("w_hh"));
    w.b_ih = vector_from_json(j.at("b_ih"));
    w.b_hh = vector_from_json(j.at("b_hh"));
    return w;
}

std::string activation_name(EncoderConfig::Activation a) {
    return a == EncoderConfig::Activation::ReLU ? "relu" : "tanh";
}

EncoderConfig::Activation activation_from_name(const std::string& s) {
    if (s == "relu") return EncoderConfig::Activation::ReLU;
    if (s == "tanh") return EncoderConfig::Activation::Tanh;
    throw std::runtime_error("unknown activation: " + s);
}

std::string aggregation_name(DecoderConfig::Aggregation a) {
    return a == DecoderConfig::Aggregation::MeanOverTimestamps ? "mean" : "last";
}

DecoderConfig::Aggregation aggregation_from_name(const std::string& s) {
    if (s == "mean") return DecoderConfig::Aggregation::MeanOverTimestamps;
    if (s == "last") return DecoderConfig::Aggregation::LastTimestamp;
    throw std::runtime_error("unknown aggregation: " + s);
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    json j;
    j["version"] = ck.version;
    j["graph_checksum"] = ck.graph_checksum;
    j["node_count"] = ck.node_count;
    j["topology_width"] = ck.topology_width;
    j["seed"] = ck.seed;

    json m;
    m["h_one"] = ck.model.encoder.h_one;
    m["alpha"] = ck.model.encoder.alpha;
    m["l_eps"] = ck.model.encoder.l_eps;
    m["activation"] = activation_name(ck.model.encoder.activation);
    m["topology_width"] = ck.model.encoder.topology_width;
    m["power_iterations"] = ck.model.encoder.power_iterations;
    m["attention_heads"] = ck.model.decoder.attention_heads;
    m["output_activation"] =
        ck.model.decoder.output_activation == DecoderConfig::OutputActivation::ReLU ? "relu"
                                                                                    : "tanh";
    m["attention_values"] =
        ck.model.decoder.attention_values == DecoderConfig::AttentionValues::SameTimestamp
            ? "same-timestamp"
            : "band-neighbors";
    m["variant"] = ablation_name(ck.model.variant);
    m["loss_selector"] = loss_selector_name(ck.model.loss.selector);
    m["graph_term_as_printed"] = ck.model.loss.graph_term_as_printed;
    m["aggregation"] = aggregation_name(ck.model.loss.aggregation);
    j["model"] = std::move(m);

    json e;
    e["mode"] = ck.estimator.mode == EstimatorConfig::Mode::Mlp ? "mlp" : "free";
    e["learning_rate"] = ck.estimator.learning_rate;
    e["epoch_budget"] = ck.estimator.epoch_budget;
    e["init_low"] = ck.estimator.init_low;
    e["init_high"] = ck.estimator.init_high;
    e["tolerance"] = ck.estimator.tolerance;
    e["tolerance_window"] = ck.estimator.tolerance_window;
    e["mlp_hidden"] = ck.estimator.mlp_hidden;
    e["seed"] = ck.estimator.seed;
    j["estimator"] = std::move(e);

    json w;
    w["w_gcn"] = matrix_to_json(ck.encoder.w_gcn);
    w["readout"] = vector_to_json(ck.encoder.readout);
    w["w_topo"] = matrix_to_json(ck.encoder.w_topo);
    w["gru_f"] = gru_to_json(ck.decoder.forward);
    w["gru_b"] = gru_to_json(ck.decoder.backward);
    json heads = json::array();
    for (const auto& h : ck.decoder.heads) {
        json hj;
        hj["w_a"] = matrix_to_json(h.w_a);
        hj["a"] = vector_to_json(h.a);
        heads.push_back(std::move(hj));
    }
    w["heads"] = std::move(heads);
    j["weights"] = std::move(w);

    atomic_write(path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path) {
    const json j = json::parse(read_file(path));
    Checkpoint ck;
    ck.version = j.at("version").get<std::string>();
    if (ck.version != kCheckpointVersion)
        throw std::runtime_error("incompatible checkpoint version '" + ck.version +
                                 "' (expected " + kCheckpointVersion + "): " + path);
    ck.graph_checksum = j.at("graph_checksum").get<std::string>();
    ck.node_count = j.at("node_count").get<int>();
    ck.topology_width = j.at("topology_width").get<int>();
    ck.seed = j.at("seed").get<std::uint64_t>();

    const json& m = j.at("model");
    ck.model.encoder.h_one = m.at("h_one").get<int>();
    ck.model.encoder.alpha = m.at("alpha").get<double>();
    ck.model.encoder.l_eps = m.at("l_eps").get<double>();
    ck.model.encoder.activation = activation_from_name(m.at("activation").get<std::string>());
    ck.model.encoder.topology_width = m.at("topology_width").get<int>();
    ck.model.encoder.power_iterations = m.at("power_iterations").get<int>();
    ck.model.decoder.attention_heads = m.at("attention_heads").get<int>();
    ck.model.decoder.output_activation = m.value("output_activation", std::string("tanh")) ==
                                                 "relu"
                                             ? DecoderConfig::OutputActivation::ReLU
                                             : DecoderConfig::OutputActivation::Tanh;
    ck.model.decoder.attention_values =
        m.value("attention_values", std::string("band-neighbors")) == "same-timestamp"
            ? DecoderConfig::AttentionValues::SameTimestamp
            : DecoderConfig::AttentionValues::BandNeighbors;
    ck.model.variant = ablation_from_name(m.at("variant").get<std::string>());
    ck.model.loss.selector = loss_selector_from_name(m.at("loss_selector").get<std::string>());
    ck.model.loss.graph_term_as_printed = m.at("graph_term_as_printed").get<bool>();
    ck.model.loss.aggregation = aggregation_from_name(m.at("aggregation").get<std::string>());

    const json& e = j.at("estimator");
    ck.estimator.mode = e.at("mode").get<std::string>() == "mlp" ? EstimatorConfig::Mode::Mlp
                                                                 : EstimatorConfig::Mode::FreeParams;
    ck.estimator.learning_rate = e.at("learning_rate").get<double>();
    ck.estimator.epoch_budget = e.at("epoch_budget").get<int>();
    ck.estimator.init_low = e.at("init_low").get<double>();
    ck.estimator.init_high = e.at("init_high").get<double>();
    ck.estimator.tolerance = e.at("tolerance").get<double>();
    ck.estimator.tolerance_window = e.at("tolerance_window").get<int>();
    ck.estimator.mlp_hidden = e.at("mlp_hidden").get<int>();
    ck.estimator.seed = e.at("seed").get<std::uint64_t>();

    const json& w = j.at("weights");
    ck.encoder.w_gcn = matrix_from_json(w.at("w_gcn"));
    ck.encoder.readout = vector_from_json(w.at("readout"));
    ck.encoder.w_topo = matrix_from_json(w.at("w_topo"));
    ck.decoder.forward = gru_from_json(w.at("gru_f"));
    ck.decoder.backward = gru_from_json(w.at("gru_b"));
    for (const auto& hj : w.at("heads")) {
        AttentionHead h;
        h.w_a = matrix_from_json(hj.at("w_a"));
        h.a = vector_from_json(hj.at("a"));
        ck.decoder.heads.push_back(std::move(h));
    }
    return ck;
}

}  // namespace difftrace
