#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "difftrace/checkpoint.hpp"
#include "difftrace/dataset.hpp"
#include "difftrace/rng.hpp"
#include "difftrace/serialize.hpp"
#include "difftrace/train.hpp"

namespace fs = std::filesystem;
using namespace difftrace;

namespace {

struct AppConfig {
    TrainConfig train;
    GenerateConfig gen;
};

void apply_config_file(AppConfig& cfg, const std::string& path) {
    const json j = json::parse(read_file(path));
    if (j.contains("train")) {
        const auto& t = j["train"];
        if (t.contains("folds")) cfg.train.folds = t["folds"].get<int>();
        if (t.contains("epochs")) cfg.train.epoch_budget = t["epochs"].get<int>();
        if (t.contains("patience")) cfg.train.patience = t["patience"].get<int>();
        if (t.contains("learning_rate")) cfg.train.learning_rate = t["learning_rate"].get<double>();
        if (t.contains("validation_fraction"))
            cfg.train.validation_fraction = t["validation_fraction"].get<double>();
        if (t.contains("loss"))
            cfg.train.loss_selector = loss_selector_from_name(t["loss"].get<std::string>());
        if (t.contains("ablation"))
            cfg.train.ablation = ablation_from_name(t["ablation"].get<std::string>());
        if (t.contains("single_fold")) cfg.train.single_fold = t["single_fold"].get<int>();
        if (t.contains("graph_loss_literal"))
            cfg.train.graph_loss_literal = t["graph_loss_literal"].get<bool>();
        if (t.contains("aggregation"))
            cfg.train.aggregation = t["aggregation"].get<std::string>() == "last"
                                        ? DecoderConfig::Aggregation::LastTimestamp
                                        : DecoderConfig::Aggregation::MeanOverTimestamps;
    }
    if (j.contains("encoder")) {
        const auto& e = j["encoder"];
        if (e.contains("h_one")) cfg.train.encoder.h_one = e["h_one"].get<int>();
        if (e.contains("alpha")) cfg.train.encoder.alpha = e["alpha"].get<double>();
        if (e.contains("l_eps")) cfg.train.encoder.l_eps = e["l_eps"].get<double>();
        if (e.contains("topology_width"))
            cfg.train.encoder.topology_width = e["topology_width"].get<int>();
        if (e.contains("activation"))
            cfg.train.encoder.activation = e["activation"].get<std::string>() == "tanh"
                                               ? EncoderConfig::Activation::Tanh
                                               : EncoderConfig::Activation::ReLU;
    }
    if (j.contains("decoder")) {
        const auto& d = j["decoder"];
        if (d.contains("heads")) cfg.train.decoder.attention_heads = d["heads"].get<int>();
    }
    if (j.contains("estimator")) {
        const auto& e = j["estimator"];
        if (e.contains("mode"))
            cfg.train.estimator.mode = e["mode"].get<std::string>() == "free"
                                           ? EstimatorConfig::Mode::FreeParams
                                           : EstimatorConfig::Mode::Mlp;
        if (e.contains("learning_rate"))
            cfg.train.estimator.learning_rate = e["learning_rate"].get<double>();
        if (e.contains("epochs")) cfg.train.estimator.epoch_budget = e["epochs"].get<int>();
        if (e.contains("init_low")) cfg.train.estimator.init_low = e["init_low"].get<double>();
        if (e.contains("init_high")) cfg.train.estimator.init_high = e["init_high"].get<double>();
        if (e.contains("mlp_hidden")) cfg.train.estimator.mlp_hidden = e["mlp_hidden"].get<int>();
    }
    if (j.contains("generate")) {
        const auto& g = j["generate"];
        if (g.contains("episodes")) cfg.gen.episode_count = g["episodes"].get<int>();
        if (g.contains("source_fraction"))
            cfg.gen.source_fraction = g["source_fraction"].get<double>();
        if (g.contains("n_prime")) cfg.gen.n_prime = g["n_prime"].get<int>();
        if (g.contains("model"))
            cfg.gen.model.kind = PropagationModel::kind_from_name(g["model"].get<std::string>());
        if (g.contains("mode"))
            cfg.gen.model.mode = g["mode"].get<std::string>() == "hom"
                                     ? PropagationModel::ParameterMode::Homogeneous
                                     : PropagationModel::ParameterMode::Heterogeneous;
        if (g.contains("p")) cfg.gen.model.p = g["p"].get<double>();
        if (g.contains("low")) cfg.gen.model.low = g["low"].get<double>();
        if (g.contains("high")) cfg.gen.model.high = g["high"].get<double>();
        if (g.contains("recovery")) cfg.gen.model.recovery_rate = g["recovery"].get<double>();
        if (g.contains("max_steps")) cfg.gen.model.max_steps = g["max_steps"].get<int>();
    }
}

std::string default_out() {
    const char* env = std::getenv("DIFFTRACE_OUT");
    return env ? env : "";
}

void write_run_manifest(const fs::path& out_dir, const std::string& command,
                        const std::string& graph_checksum, std::uint64_t seed,
                        const json& config_echo) {
    json j;
    j["version"] = kArtifactVersion;
    j["command"] = command;
    j["graph_checksum"] = graph_checksum;
    j["seed"] = seed;
    j["config"] = config_echo;
    j["config_hash"] = to_hex(fnv1a64(config_echo.dump()));
    atomic_write(out_dir / "manifest.json", j.dump(2) + "\n");
}

json train_config_echo(const TrainConfig& t) {
    json j;
    j["folds"] = t.folds;
    j["epochs"] = t.epoch_budget;
    j["patience"] = t.patience;
    j["learning_rate"] = t.learning_rate;
    j["validation_fraction"] = t.validation_fraction;
    j["loss"] = loss_selector_name(t.loss_selector);
    j["ablation"] = ablation_name(t.ablation);
    j["single_fold"] = t.single_fold;
    j["graph_loss_literal"] = t.graph_loss_literal;
    j["aggregation"] =
        t.aggregation == DecoderConfig::Aggregation::LastTimestamp ? "last" : "mean";
    j["encoder"] = {{"h_one", t.encoder.h_one},
                    {"alpha", t.encoder.alpha},
                    {"l_eps", t.encoder.l_eps},
                    {"topology_width", t.encoder.topology_width}};
    j["decoder"] = {{"heads", t.decoder.attention_heads}};
    j["estimator"] = {{"mode", t.estimator.mode == EstimatorConfig::Mode::Mlp ? "mlp" : "free"},
                      {"learning_rate", t.estimator.learning_rate},
                      {"epochs", t.estimator.epoch_budget},
                      {"mlp_hidden", t.estimator.mlp_hidden}};
    return j;
}

void write_curves_csv(const TrainResult& r, const fs::path& path) {
    std::ostringstream os;
    os << "fold,epoch,train_total,val_entropy,val_mse,val_graph,val_total\n";
    os.precision(12);
    for (const auto& c : r.curves)
        os << c.fold << ',' << c.epoch << ',' << c.train_total << ',' << c.val_entropy << ','
           << c.val_mse << ',' << c.val_graph << ',' << c.val_total << '\n';
    atomic_write(path, os.str());
}

void emit_train_outputs(const TrainResult& result, const TrainConfig& cfg, const Graph& g,
                        const fs::path& out_dir, const std::string& command) {
    json metrics = train_result_to_json(result, cfg);
    metrics["version"] = kArtifactVersion;
    metrics["graph_checksum"] = g.checksum();
    atomic_write(out_dir / "metrics.json", metrics.dump(2) + "\n");
    atomic_write(out_dir / "metrics.txt", render_metrics_table(metrics));
    write_curves_csv(result, out_dir / "loss_curves.csv");
    save_checkpoint(result.checkpoint, (out_dir / "checkpoint.json").string());
    result.influence.save((out_dir / "influence.txt").string());
    write_run_manifest(out_dir, command, g.checksum(), cfg.seed, train_config_echo(cfg));
    std::cout << render_metrics_table(metrics);
}

int run(int argc, char** argv) {
    CLI::App app{"diffusion source localization pipeline"};
    app.require_subcommand(1);

    AppConfig cfg;
    std::string graph_path, dataset_path, checkpoint_path, config_path, out_dir = default_out();
    std::string graph_id, variant_name, loss_name, model_name, mode_name, agg_name;
    std::string estimator_mode, influence_path;
    std::uint64_t seed = 0;

    auto add_common = [&](CLI::App* cmd, bool needs_graph, bool needs_dataset) {
        if (needs_graph) cmd->add_option("--graph", graph_path, "edge list file")->required();
        if (needs_dataset) cmd->add_option("--dataset", dataset_path, "episode file")->required();
        cmd->add_option("--out", out_dir, "output directory (env DIFFTRACE_OUT)");
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "master seed");
    };

    // generate
    auto* gen = app.add_subcommand("generate", "simulate propagation episodes");
    add_common(gen, true, false);
    gen->add_option("--episodes", cfg.gen.episode_count, "episode count");
    gen->add_option("--source-fraction", cfg.gen.source_fraction, "source node fraction");
    gen->add_option("--n-prime", cfg.gen.n_prime, "available snapshots per episode");
    gen->add_option("--model", model_name, "ic|si|sir");
    gen->add_option("--param-mode", mode_name, "het|hom");
    gen->add_option("--p", cfg.gen.model.p, "homogeneous activation probability");
    gen->add_option("--low", cfg.gen.model.low, "heterogeneous draw lower bound");
    gen->add_option("--high", cfg.gen.model.high, "heterogeneous draw upper bound");
    gen->add_option("--recovery", cfg.gen.model.recovery_rate, "SIR recovery rate");
    gen->add_option("--max-steps", cfg.gen.model.max_steps, "SI/SIR chain cap");
    gen->add_option("--graph-id", graph_id, "graph label stored per episode");

    // fit-influence
    auto* fit = app.add_subcommand("fit-influence", "fit the influence matrix");
    add_common(fit, true, true);
    fit->add_option("--estimator-mode", estimator_mode, "mlp|free");
    fit->add_option("--estimator-lr", cfg.train.estimator.learning_rate, "learning rate");
    fit->add_option("--estimator-epochs", cfg.train.estimator.epoch_budget, "epoch budget");

    // train / ablate share options
    auto add_train_opts = [&](CLI::App* cmd) {
        add_common(cmd, true, true);
        cmd->add_option("--folds", cfg.train.folds, "cross-validation folds");
        cmd->add_option("--epochs", cfg.train.epoch_budget, "epoch budget per fold");
        cmd->add_option("--patience", cfg.train.patience, "early stopping patience");
        cmd->add_option("--lr", cfg.train.learning_rate, "learning rate");
        cmd->add_option("--loss", loss_name, "full|entropy-to-mse|no-mse|no-graph");
        cmd->add_option("--single-fold", cfg.train.single_fold, "train only this fold");
        cmd->add_option("--h-one", cfg.train.encoder.h_one, "GCN hidden size");
        cmd->add_option("--alpha", cfg.train.encoder.alpha, "residual weight");
        cmd->add_option("--l-eps", cfg.train.encoder.l_eps, "Lipschitz bound");
        cmd->add_option("--topology-width", cfg.train.encoder.topology_width,
                        "topology feature width (0 = sqrt(|V|))");
        cmd->add_option("--heads", cfg.train.decoder.attention_heads, "attention heads");
        cmd->add_option("--aggregation", agg_name, "mean|last timestamp aggregation");
        cmd->add_flag("--graph-loss-literal", cfg.train.graph_loss_literal,
                      "use the auxiliary term exactly as printed");
        cmd->add_option("--estimator-mode", estimator_mode, "mlp|free");
        cmd->add_option("--influence", influence_path, "precomputed influence file");
    };
    auto* train_cmd = app.add_subcommand("train", "train the localization model");
    add_train_opts(train_cmd);
    train_cmd->add_option("--ablation", variant_name, "none|W-|D-|S-|A-");

    auto* ablate_cmd =
        app.add_subcommand("ablate", "train one ablation variant on the shared split");
    add_train_opts(ablate_cmd);
    ablate_cmd->add_option("--variant", variant_name, "W-|D-|S-|A-")->required();

    // evaluate / transfer
    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
    add_common(eval_cmd, true, true);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    auto* transfer_cmd =
        app.add_subcommand("transfer", "apply a checkpoint to another graph's episodes");
    add_common(transfer_cmd, true, true);
    transfer_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    // report
    auto* report_cmd = app.add_subcommand("report", "tabulate metrics across run directories");
    std::vector<std::string> run_dirs;
    std::string report_out;
    report_cmd->add_option("--runs", run_dirs, "run directories")->required();
    report_cmd->add_option("--out", report_out, "write the table here too");

    CLI11_PARSE(app, argc, argv);

    auto* active = app.get_subcommands().front();
    const std::string command = active->get_name();

    if (command == "report") {
        std::ostringstream os;
        os << "run                              f1      aed     degree  random  variant loss\n";
        for (const auto& dir : run_dirs) {
            const json m = json::parse(read_file(fs::path(dir) / "metrics.json"));
            const auto& mean = m.at("mean");
            char buf[256];
            std::snprintf(buf, sizeof(buf), "%-32s %.4f  %.4f  %.4f  %.4f  %-7s %s\n",
                          fs::path(dir).filename().string().c_str(),
                          mean.at("f1").get<double>(), mean.at("aed").get<double>(),
                          mean.at("degree_f1").get<double>(),
                          mean.at("random_f1").get<double>(),
                          m.value("ablation", std::string("-")).c_str(),
                          m.value("loss_selector", std::string("-")).c_str());
            os << buf;
        }
        std::cout << os.str();
        if (!report_out.empty()) atomic_write(report_out, os.str());
        return 0;
    }

    if (out_dir.empty())
        throw std::runtime_error("no output directory: pass --out or set DIFFTRACE_OUT");
    fs::create_directories(out_dir);

    // precedence: defaults, then config file, then explicit flags
    if (!config_path.empty()) {
        AppConfig from_file;
        apply_config_file(from_file, config_path);
        auto keep = [&](const char* flag) {
            const auto* opt = active->get_option_no_throw(flag);
            return opt != nullptr && opt->count() > 0;
        };
        AppConfig flags = cfg;
        cfg = from_file;
        if (keep("--episodes")) cfg.gen.episode_count = flags.gen.episode_count;
        if (keep("--source-fraction")) cfg.gen.source_fraction = flags.gen.source_fraction;
        if (keep("--n-prime")) cfg.gen.n_prime = flags.gen.n_prime;
        if (keep("--p")) cfg.gen.model.p = flags.gen.model.p;
        if (keep("--low")) cfg.gen.model.low = flags.gen.model.low;
        if (keep("--high")) cfg.gen.model.high = flags.gen.model.high;
        if (keep("--recovery")) cfg.gen.model.recovery_rate = flags.gen.model.recovery_rate;
        if (keep("--max-steps")) cfg.gen.model.max_steps = flags.gen.model.max_steps;
        if (keep("--folds")) cfg.train.folds = flags.train.folds;
        if (keep("--epochs")) cfg.train.epoch_budget = flags.train.epoch_budget;
        if (keep("--patience")) cfg.train.patience = flags.train.patience;
        if (keep("--lr")) cfg.train.learning_rate = flags.train.learning_rate;
        if (keep("--single-fold")) cfg.train.single_fold = flags.train.single_fold;
        if (keep("--h-one")) cfg.train.encoder.h_one = flags.train.encoder.h_one;
        if (keep("--alpha")) cfg.train.encoder.alpha = flags.train.encoder.alpha;
        if (keep("--l-eps")) cfg.train.encoder.l_eps = flags.train.encoder.l_eps;
        if (keep("--topology-width"))
            cfg.train.encoder.topology_width = flags.train.encoder.topology_width;
        if (keep("--heads")) cfg.train.decoder.attention_heads = flags.train.decoder.attention_heads;
        if (keep("--graph-loss-literal"))
            cfg.train.graph_loss_literal = flags.train.graph_loss_literal;
        if (keep("--estimator-lr"))
            cfg.train.estimator.learning_rate = flags.train.estimator.learning_rate;
        if (keep("--estimator-epochs"))
            cfg.train.estimator.epoch_budget = flags.train.estimator.epoch_budget;
    }
    if (!model_name.empty()) cfg.gen.model.kind = PropagationModel::kind_from_name(model_name);
    if (!mode_name.empty())
        cfg.gen.model.mode = mode_name == "hom" ? PropagationModel::ParameterMode::Homogeneous
                                                : PropagationModel::ParameterMode::Heterogeneous;
    if (!loss_name.empty()) cfg.train.loss_selector = loss_selector_from_name(loss_name);
    if (!variant_name.empty()) cfg.train.ablation = ablation_from_name(variant_name);
    if (!agg_name.empty())
        cfg.train.aggregation = agg_name == "last" ? DecoderConfig::Aggregation::LastTimestamp
                                                   : DecoderConfig::Aggregation::MeanOverTimestamps;
    if (!estimator_mode.empty())
        cfg.train.estimator.mode = estimator_mode == "free" ? EstimatorConfig::Mode::FreeParams
                                                            : EstimatorConfig::Mode::Mlp;
    cfg.train.seed = seed;
    cfg.train.estimator.seed = derive_seed(seed, 0xE57);
    cfg.gen.master_seed = seed;

    const fs::path out(out_dir);

    if (command == "generate") {
        Graph g = load_edge_list(graph_path);
        cfg.gen.graph_id = graph_id.empty() ? fs::path(graph_path).stem().string() : graph_id;
        auto episodes = generate_dataset(g, cfg.gen);
        save_dataset(episodes, (out / "dataset.jsonl").string());
        save_manifest(g, cfg.gen, static_cast<int>(episodes.size()),
                      (out / "manifest.json").string());
        std::cout << "generated " << episodes.size() << " episodes on " << cfg.gen.graph_id
                  << " (|V|=" << g.node_count() << ", |E|=" << g.edge_count() << ")\n";
        return 0;
    }

    Graph g = load_edge_list(graph_path);

    if (command == "fit-influence") {
        auto episodes = load_dataset(dataset_path);
        auto fit_result = fit_influence(g, episodes, cfg.train.estimator);
        fit_result.matrix.save((out / "influence.txt").string());
        json rep;
        rep["epochs_run"] = fit_result.epochs_run;
        rep["final_loss"] = fit_result.loss_history.back();
        rep["loss_history"] = fit_result.loss_history;
        atomic_write(out / "fit_report.json", rep.dump(2) + "\n");
        write_run_manifest(out, command, g.checksum(), seed, train_config_echo(cfg.train));
        std::cout << "fitted influence matrix in " << fit_result.epochs_run
                  << " epochs (final loss " << fit_result.loss_history.back() << ")\n";
        return 0;
    }

    if (command == "train" || command == "ablate") {
        auto episodes = load_dataset(dataset_path);
        std::optional<InfluenceMatrix> fitted;
        if (!influence_path.empty()) fitted = InfluenceMatrix::load(influence_path, g);
        // ablation rows are compared on one shared split unless told otherwise
        if (command == "ablate" && active->count("--single-fold") == 0)
            cfg.train.single_fold = 0;
        auto result = train(g, episodes, cfg.train, fitted ? &*fitted : nullptr);
        emit_train_outputs(result, cfg.train, g, out, command);
        return 0;
    }

    if (command == "evaluate" || command == "transfer") {
        auto episodes = load_dataset(dataset_path);
        auto ck = load_checkpoint(checkpoint_path);
        auto result = transfer_evaluate(ck, g, episodes);
        json metrics = transfer_result_to_json(result);
        metrics["version"] = kArtifactVersion;
        metrics["graph_checksum"] = g.checksum();
        metrics["checkpoint_graph_checksum"] = ck.graph_checksum;
        atomic_write(out / "metrics.json", metrics.dump(2) + "\n");
        atomic_write(out / "metrics.txt", render_metrics_table(metrics));
        result.influence.save((out / "influence_refit.txt").string());
        write_run_manifest(out, command, g.checksum(), ck.seed, train_config_echo(cfg.train));
        std::cout << render_metrics_table(metrics);
        return 0;
    }

    throw std::runtime_error("unhandled command: " + command);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        json err;
        err["error"] = e.what();
        std::cerr << err.dump() << std::endl;
        return 1;
    }
}
