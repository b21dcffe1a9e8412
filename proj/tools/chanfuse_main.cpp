// Command-line front end: dataset generation, training, evaluation,
// experiment sweeps and path-list import.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "chanfuse/experiment.hpp"

namespace {

using namespace chanfuse;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNanFlagged = 3;  // run finished, but some rows diverged

int cmd_generate(const std::string& config_path, const std::string& out_path) {
    DatasetConfig cfg = load_dataset_config(config_path);
    Dataset ds = generate(cfg);
    save_dataset(ds, out_path);
    std::printf("wrote %s: %zu train / %zu test samples (M=%d, T_unit=%d, T_p=%d, M_fb=%d)\n",
                out_path.c_str(), ds.train.size(), ds.test.size(), cfg.scene.num_antennas,
                cfg.t_unit, cfg.t_p, cfg.m_fb);
    return kExitOk;
}

WiringSpec wiring_from_arg(const std::string& arg) {
    if (!arg.empty() && arg.front() == '{') return wiring_preset(arg);
    return load_wiring(arg);
}

int cmd_train(const std::string& dataset_path, const std::string& wiring_arg, uint64_t seed,
              int budget, int patience, double min_delta, int batch, double lr_override,
              const std::string& out_path, const std::string& trace_path) {
    Dataset ds = load_dataset(dataset_path);
    FusionGraph graph(wiring_from_arg(wiring_arg), GraphDims::from_config(ds.config), seed);
    TrainOptions opt;
    opt.epoch_budget = budget;
    opt.patience = patience;
    opt.min_delta = min_delta;
    opt.batch_size = batch;
    opt.seed = seed;
    opt.lr_override = lr_override;
    opt.record_test_nmse = !trace_path.empty();
    opt.test_set = &ds.test;

    TrainReport report = staged_train(graph, ds.train, opt);
    NmseResult res = evaluate(graph, ds.test);
    if (!out_path.empty()) graph.save(out_path);

    std::printf("trained %s: %d epochs over %zu stages, test NMSE %.6g (flops %lld)\n",
                graph.wiring().name.c_str(), report.total_epochs, report.stages.size(), res.value,
                static_cast<long long>(graph_flops(graph)));
    if (!trace_path.empty()) {
        std::vector<TraceRow> traces;
        for (const StageTrace& st : report.stages)
            for (size_t e = 0; e < st.train_loss.size(); ++e)
                traces.push_back({"train", graph.wiring().name, 0.0, seed, st.stage,
                                  static_cast<int>(e), st.train_loss[e],
                                  e < st.test_nmse.size() ? st.test_nmse[e] : std::nan("")});
        write_trace_csv(traces, trace_path);
    }
    return kExitOk;
}

int cmd_evaluate(const std::string& dataset_path, const std::string& ckpt_path,
                 const std::string& out_path) {
    Dataset ds = load_dataset(dataset_path);
    FusionGraph graph = FusionGraph::from_checkpoint(ckpt_path);
    NmseResult res = evaluate(graph, ds.test);
    std::printf("%s: test NMSE %.6g over %zu samples (%zu excluded)\n",
                graph.wiring().name.c_str(), res.value, res.used, res.excluded);
    if (!out_path.empty()) {
        ResultRow row;
        row.figure = "evaluate";
        row.model = graph.wiring().name;
        row.kind = "net";
        row.sweep_var = "none";
        row.nmse = res.value;
        row.nmse_excluded = res.excluded;
        row.flops = graph_flops(graph);
        write_results_csv({row}, out_path);
    }
    return kExitOk;
}

int cmd_sweep(const std::string& spec_path, std::string out_dir, int workers_override) {
    ExperimentSpec spec = load_experiment_spec(spec_path);
    if (!out_dir.empty()) spec.out_dir = out_dir;
    if (workers_override > 0) spec.workers = workers_override;
    std::filesystem::create_directories(spec.out_dir);

    ExperimentResult res = run(spec);
    const std::string base = spec.out_dir + "/" + spec.figure;
    write_results_csv(res.rows, base + "_results.csv");
    write_summary_csv(res.rows, base + "_summary.csv");
    write_timing_csv(res.rows, base + "_timing.csv");
    if (spec.trace) write_trace_csv(res.traces, base + "_trace.csv");
    std::printf("wrote %s_{results,summary,timing%s}.csv (%zu rows)%s\n", base.c_str(),
                spec.trace ? ",trace" : "", res.rows.size(),
                res.any_nan ? " [some rows diverged]" : "");
    return res.any_nan ? kExitNanFlagged : kExitOk;
}

int cmd_import(const std::string& in_path, int max_paths, const std::string& report_path) {
    PathImport imp = import_paths(in_path, max_paths);
    size_t total = 0;
    for (const auto& [user, paths] : imp.users) total += paths.paths.size();
    std::printf("%s: %zu users, %zu paths after truncation to %d\n", in_path.c_str(),
                imp.users.size(), total, max_paths);
    for (const std::string& w : imp.warnings) std::printf("warning: %s\n", w.c_str());
    if (!report_path.empty()) {
        std::ofstream out(report_path);
        out << "user_id,paths\n";
        for (const auto& [user, paths] : imp.users)
            out << user << "," << paths.paths.size() << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FDD massive-MIMO downlink channel prediction workbench"};
    app.require_subcommand(1);

    std::string config_path, out_path, dataset_path, wiring = "{H}", ckpt_path, trace_path;
    std::string spec_path, in_path, out_dir;
    uint64_t seed = 1;
    int budget = 200, patience = 20, batch = 128, max_paths = 25, workers = 0;
    double min_delta = 1e-5, lr_override = 0.0;

    auto* gen = app.add_subcommand("generate-dataset", "Generate a dataset container");
    gen->add_option("--config", config_path, "dataset config file")->required();
    gen->add_option("--out", out_path, "output dataset file")->required();

    auto* train = app.add_subcommand("train", "Train one network on a dataset");
    train->add_option("--dataset", dataset_path, "dataset container")->required();
    train->add_option("--wiring", wiring, "wiring preset name ({H,L}_f ...) or wiring file");
    train->add_option("--seed", seed, "training seed");
    train->add_option("--budget", budget, "epoch budget per stage");
    train->add_option("--patience", patience, "plateau patience in epochs");
    train->add_option("--min-delta", min_delta, "plateau improvement threshold");
    train->add_option("--batch", batch, "batch size");
    train->add_option("--lr", lr_override, "override every stage's learning rate");
    train->add_option("--out", out_path, "checkpoint output path");
    train->add_option("--trace", trace_path, "per-epoch trace CSV");

    auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
    eval->add_option("--dataset", dataset_path, "dataset container")->required();
    eval->add_option("--checkpoint", ckpt_path, "trained graph checkpoint")->required();
    eval->add_option("--out", out_path, "results CSV path");

    auto* sweep = app.add_subcommand("sweep", "Run an experiment spec");
    sweep->add_option("--spec", spec_path, "experiment spec file")->required();
    sweep->add_option("--out-dir", out_dir, "output directory (overrides spec)");
    sweep->add_option("--workers", workers, "parallel cells (overrides spec)");

    auto* imp = app.add_subcommand("import-paths", "Validate an external path-list file");
    imp->add_option("--in", in_path, "path-list text file")->required();
    imp->add_option("--max-paths", max_paths, "per-user path budget");
    imp->add_option("--report", out_path, "per-user summary CSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_generate(config_path, out_path);
        if (train->parsed())
            return cmd_train(dataset_path, wiring, seed, budget, patience, min_delta, batch,
                             lr_override, out_path, trace_path);
        if (eval->parsed()) return cmd_evaluate(dataset_path, ckpt_path, out_path);
        if (sweep->parsed()) return cmd_sweep(spec_path, out_dir, workers);
        if (imp->parsed()) return cmd_import(in_path, max_paths, out_path);
    } catch (const chanfuse::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return kExitConfig;
}
