#include "chanfuse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <thread>

#include "chanfuse/textconfig.hpp"

namespace chanfuse {

namespace {

double now_s() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// branch letters only appear inside the {...} part of a wiring name
bool is_family(const std::string& wiring, char branch) {
    return wiring.find(branch) != std::string::npos;
}

WiringSpec resolve_wiring(const std::string& name) {
    if (!name.empty() && name.front() == '{') return wiring_preset(name);
    return load_wiring(name);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    if (n == 0) return std::nan("");
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void run_pool(std::vector<std::function<void()>>& jobs, int workers) {
    if (workers <= 1) {
        for (auto& j : jobs) j();
        return;
    }
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            jobs[i]();
        }
    };
    std::vector<std::thread> threads;
    const int n = std::min<int>(workers, static_cast<int>(jobs.size()));
    threads.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
}

}  // namespace

std::string sweep_var_name(SweepVar v) {
    switch (v) {
        case SweepVar::None: return "none";
        case SweepVar::TUnit: return "t_unit";
        case SweepVar::TFb: return "t_fb";
        case SweepVar::SnrDb: return "snr_db";
        case SweepVar::LearningRate: return "learning_rate";
    }
    return "?";
}

SweepVar sweep_var_from_name(const std::string& s) {
    if (s == "none") return SweepVar::None;
    if (s == "t_unit") return SweepVar::TUnit;
    if (s == "t_fb") return SweepVar::TFb;
    if (s == "snr_db") return SweepVar::SnrDb;
    if (s == "learning_rate") return SweepVar::LearningRate;
    throw ConfigError("unknown sweep variable '" + s + "'");
}

void ExperimentSpec::validate() const {
    dataset.validate();
    if (wirings.empty()) throw ConfigError("experiment: at least one wiring required");
    if (seeds.empty()) throw ConfigError("experiment: at least one seed required");
    if (budget < 1) throw ConfigError("experiment: budget must be >= 1");
    if (sweep != SweepVar::None && values.empty())
        throw ConfigError("experiment: sweep needs values");
    for (const std::string& w : wirings) resolve_wiring(w);  // fail early on bad names
    if (sweep == SweepVar::TUnit || sweep == SweepVar::TFb) {
        for (double v : values)
            if (v < 1 || v != std::floor(v))
                throw ConfigError("experiment: " + sweep_var_name(sweep) +
                                  " values must be positive integers");
    }
    if (sweep == SweepVar::LearningRate) {
        for (double v : values)
            if (!(v > 0)) throw ConfigError("experiment: learning rates must be > 0");
    }
    if (sweep == SweepVar::TFb) {
        // feedback length means m_fb for P-family nets and T_p for R/S-family nets
        for (const std::string& w : wirings)
            if (!is_family(w, 'P') && !is_family(w, 'R') && !is_family(w, 'S'))
                throw ConfigError("experiment: t_fb sweep needs P-, R- or S-family wirings, got " +
                                  w);
    }
}

std::vector<ResultRow> baseline_rows(const ExperimentSpec& spec, const Dataset& ds,
                                     double sweep_value) {
    std::vector<ResultRow> rows;
    const int m = ds.config.scene.num_antennas;

    auto make_row = [&](const std::string& model, const NmseResult& r) {
        ResultRow row;
        row.figure = spec.figure;
        row.model = model;
        row.kind = "baseline";
        row.sweep_var = sweep_var_name(spec.sweep);
        row.sweep_value = sweep_value;
        row.seed = 0;
        row.nmse = r.value;
        row.nmse_excluded = r.excluded;
        return row;
    };

    std::vector<std::vector<cxd>> refs;
    refs.reserve(ds.test.size());
    for (const Sample& s : ds.test) refs.push_back(s.label.entries);

    if (spec.baseline_ls) {
        if (ds.config.t_p < m) throw RankDeficiencyError("baseline_rows: LS needs T_p >= M");
        std::vector<std::vector<cxd>> est;
        est.reserve(ds.test.size());
        for (const Sample& s : ds.test) est.push_back(ls_estimate(s.rx, s.pilots).entries);
        rows.push_back(make_row("LS", nmse(est, refs)));
    }
    if (spec.baseline_lmmse) {
        std::vector<ChannelVector> train_labels;
        train_labels.reserve(ds.train.size());
        for (const Sample& s : ds.train) train_labels.push_back(s.label);
        Eigen::MatrixXcd cov = empirical_covariance(train_labels);
        std::vector<std::vector<cxd>> est;
        est.reserve(ds.test.size());
        for (const Sample& s : ds.test) {
            // receiver-side noise estimate: measured rx power split by the known SNR
            double sigma2 = 0.0;
            if (!std::isinf(s.rx.snr_db)) {
                const double p_rx = s.rx.r.squaredNorm() / static_cast<double>(s.rx.r.cols());
                sigma2 = p_rx / (1.0 + std::pow(10.0, s.rx.snr_db / 10.0));
            }
            est.push_back(lmmse_estimate(s.rx, s.pilots, cov, sigma2).entries);
        }
        rows.push_back(make_row("LMMSE", nmse(est, refs)));
    }
    return rows;
}

ExperimentResult run(const ExperimentSpec& spec) {
    spec.validate();
    const std::vector<double> values =
        spec.sweep == SweepVar::None ? std::vector<double>{0.0} : spec.values;
    const bool shared_training =
        spec.sweep == SweepVar::None || spec.sweep == SweepVar::LearningRate ||
        spec.sweep == SweepVar::SnrDb;

    std::shared_ptr<const Dataset> shared_base;
    if (shared_training) shared_base = std::make_shared<Dataset>(generate(spec.dataset));

    struct ValueData {
        std::shared_ptr<const Dataset> mfb_ds;  // TUnit variant, or TFb P-family variant
        std::shared_ptr<const Dataset> tp_ds;   // TFb R/S-family variant
        std::vector<Sample> snr_test;           // SnrDb per-value test split
    };
    std::map<size_t, ValueData> data;
    for (size_t vi = 0; vi < values.size(); ++vi) {
        ValueData vd;
        switch (spec.sweep) {
            case SweepVar::None:
            case SweepVar::LearningRate:
                break;
            case SweepVar::TUnit: {
                DatasetConfig cfg = spec.dataset;
                cfg.t_unit = static_cast<int>(values[vi]);
                vd.mfb_ds = std::make_shared<Dataset>(generate(cfg));
                break;
            }
            case SweepVar::TFb: {
                bool p_family = false, tp_family = false;
                for (const std::string& w : spec.wirings) {
                    p_family = p_family || is_family(w, 'P');
                    tp_family = tp_family || is_family(w, 'R') || is_family(w, 'S');
                }
                if (p_family) {
                    DatasetConfig cfg = spec.dataset;
                    cfg.m_fb = static_cast<int>(values[vi]);
                    vd.mfb_ds = std::make_shared<Dataset>(generate(cfg));
                }
                if (tp_family || spec.baseline_ls || spec.baseline_lmmse) {
                    DatasetConfig cfg = spec.dataset;
                    cfg.t_p = static_cast<int>(values[vi]);
                    vd.tp_ds = std::make_shared<Dataset>(generate(cfg));
                }
                break;
            }
            case SweepVar::SnrDb: {
                DatasetConfig cfg = spec.dataset;
                cfg.snr_db = values[vi];
                vd.snr_test = generate(cfg).test;
                break;
            }
        }
        data.emplace(vi, std::move(vd));
    }

    auto train_dataset_for = [&](size_t vi, const std::string& wiring) -> const Dataset& {
        switch (spec.sweep) {
            case SweepVar::None:
            case SweepVar::LearningRate:
            case SweepVar::SnrDb:
                return *shared_base;
            case SweepVar::TUnit:
                return *data.at(vi).mfb_ds;
            case SweepVar::TFb:
                if (is_family(wiring, 'P')) return *data.at(vi).mfb_ds;
                return *data.at(vi).tp_ds;
        }
        return *shared_base;
    };

    ExperimentResult result;
    struct Cell {
        size_t vi = 0, wi = 0, si = 0;
        std::vector<ResultRow> rows;
        std::vector<TraceRow> traces;
    };

    std::vector<Cell> cells;
    if (spec.sweep == SweepVar::SnrDb) {
        // one trained net per (wiring, seed), tested across every SNR value
        for (size_t wi = 0; wi < spec.wirings.size(); ++wi)
            for (size_t si = 0; si < spec.seeds.size(); ++si) cells.push_back({0, wi, si, {}, {}});
    } else {
        for (size_t vi = 0; vi < values.size(); ++vi)
            for (size_t wi = 0; wi < spec.wirings.size(); ++wi)
                for (size_t si = 0; si < spec.seeds.size(); ++si)
                    cells.push_back({vi, wi, si, {}, {}});
    }

    auto run_cell = [&](Cell& cell) {
        const std::string& wiring_name = spec.wirings[cell.wi];
        const uint64_t seed = spec.seeds[cell.si];
        const Dataset& ds = train_dataset_for(cell.vi, wiring_name);

        ResultRow row;
        row.figure = spec.figure;
        row.model = wiring_name;
        row.kind = "net";
        row.sweep_var = sweep_var_name(spec.sweep);
        row.sweep_value = values[cell.vi];
        row.seed = seed;

        const double t0 = now_s();
        FusionGraph graph(resolve_wiring(wiring_name), GraphDims::from_config(ds.config), seed);
        row.flops = graph_flops(graph);
        TrainOptions opt;
        opt.epoch_budget = spec.budget;
        opt.patience = spec.patience;
        opt.min_delta = spec.min_delta;
        opt.batch_size = spec.batch_size;
        opt.seed = seed;
        if (spec.sweep == SweepVar::LearningRate) opt.lr_override = values[cell.vi];
        opt.record_test_nmse = spec.trace;
        opt.test_set = &ds.test;

        bool nan = false;
        TrainReport report;
        try {
            report = staged_train(graph, ds.train, opt);
            row.epochs = report.total_epochs;
        } catch (const NonFiniteLossError&) {
            nan = true;
        }

        auto fill_eval = [&](ResultRow& r, const std::vector<Sample>& test) {
            if (nan) {
                r.nan_flag = true;
                r.nmse = std::nan("");
                return;
            }
            NmseResult e = evaluate(graph, test);
            r.nmse = e.value;
            r.nmse_excluded = e.excluded;
        };

        if (spec.sweep == SweepVar::SnrDb) {
            for (size_t vi = 0; vi < values.size(); ++vi) {
                ResultRow r = row;
                r.sweep_value = values[vi];
                fill_eval(r, data.at(vi).snr_test);
                r.wall_s = vi == 0 ? now_s() - t0 : 0.0;
                cell.rows.push_back(r);
            }
        } else {
            fill_eval(row, ds.test);
            row.wall_s = now_s() - t0;
            cell.rows.push_back(row);
        }

        for (const StageTrace& st : report.stages) {
            for (size_t e = 0; e < st.train_loss.size(); ++e) {
                TraceRow tr;
                tr.figure = spec.figure;
                tr.model = wiring_name;
                tr.sweep_value = values[cell.vi];
                tr.seed = seed;
                tr.stage = st.stage;
                tr.epoch = static_cast<int>(e);
                tr.train_loss = st.train_loss[e];
                tr.test_nmse = e < st.test_nmse.size() ? st.test_nmse[e] : std::nan("");
                cell.traces.push_back(tr);
            }
        }
    };

    std::vector<std::function<void()>> jobs;
    jobs.reserve(cells.size());
    for (Cell& c : cells) jobs.emplace_back([&run_cell, &c]() { run_cell(c); });
    run_pool(jobs, spec.workers);

    // deterministic row order: value-major, baselines first, then nets by (wiring, seed)
    for (size_t vi = 0; vi < values.size(); ++vi) {
        if (spec.baseline_ls || spec.baseline_lmmse) {
            if (spec.sweep == SweepVar::SnrDb) {
                Dataset snr_ds;
                snr_ds.config = shared_base->config;
                snr_ds.config.snr_db = values[vi];
                snr_ds.train = shared_base->train;
                snr_ds.test = data.at(vi).snr_test;
                auto rows = baseline_rows(spec, snr_ds, values[vi]);
                result.rows.insert(result.rows.end(), rows.begin(), rows.end());
            } else {
                const Dataset& ds = spec.sweep == SweepVar::None ||
                                            spec.sweep == SweepVar::LearningRate
                                        ? *shared_base
                                        : (data.at(vi).tp_ds ? *data.at(vi).tp_ds
                                                             : *data.at(vi).mfb_ds);
                auto rows = baseline_rows(spec, ds, values[vi]);
                result.rows.insert(result.rows.end(), rows.begin(), rows.end());
            }
        }
        for (const Cell& c : cells) {
            for (const ResultRow& r : c.rows) {
                const bool match =
                    spec.sweep == SweepVar::SnrDb ? r.sweep_value == values[vi] : c.vi == vi;
                if (match) result.rows.push_back(r);
            }
        }
    }
    for (const Cell& c : cells)
        result.traces.insert(result.traces.end(), c.traces.begin(), c.traces.end());
    for (const ResultRow& r : result.rows) result.any_nan = result.any_nan || r.nan_flag;
    return result;
}

void write_results_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "schema,figure,model,kind,sweep_var,sweep_value,seed,nmse,nmse_excluded,flops,epochs,"
           "nan_flag\n";
    for (const ResultRow& r : rows)
        out << kResultsSchema << "," << r.figure << "," << r.model << "," << r.kind << ","
            << r.sweep_var << "," << fmt(r.sweep_value) << "," << r.seed << "," << fmt(r.nmse)
            << "," << r.nmse_excluded << "," << r.flops << "," << r.epochs << ","
            << (r.nan_flag ? 1 : 0) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

void write_summary_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "schema,figure,model,kind,sweep_var,sweep_value,seeds,median_nmse\n";
    // group in first-appearance order
    std::vector<std::pair<std::string, std::pair<const ResultRow*, std::vector<double>>>> groups;
    for (const ResultRow& r : rows) {
        const std::string key = r.model + "|" + fmt(r.sweep_value);
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const auto& g) { return g.first == key; });
        if (it == groups.end()) {
            groups.push_back({key, {&r, {}}});
            it = groups.end() - 1;
        }
        if (!r.nan_flag) it->second.second.push_back(r.nmse);
    }
    for (const auto& g : groups) {
        const ResultRow& r = *g.second.first;
        out << kSummarySchema << "," << r.figure << "," << r.model << "," << r.kind << ","
            << r.sweep_var << "," << fmt(r.sweep_value) << "," << g.second.second.size() << ","
            << fmt(median(g.second.second)) << "\n";
    }
    if (!out) throw IoError("failed writing " + path);
}

void write_timing_csv(const std::vector<ResultRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "schema,figure,model,sweep_var,sweep_value,seed,wall_s\n";
    for (const ResultRow& r : rows)
        out << kTimingSchema << "," << r.figure << "," << r.model << "," << r.sweep_var << ","
            << fmt(r.sweep_value) << "," << r.seed << "," << fmt(r.wall_s) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

void write_trace_csv(const std::vector<TraceRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "schema,figure,model,sweep_value,seed,stage,epoch,train_loss,test_nmse\n";
    for (const TraceRow& r : rows)
        out << kTraceSchema << "," << r.figure << "," << r.model << "," << fmt(r.sweep_value)
            << "," << r.seed << "," << r.stage << "," << r.epoch << "," << fmt(r.train_loss)
            << "," << fmt(r.test_nmse) << "\n";
    if (!out) throw IoError("failed writing " + path);
}

ExperimentSpec load_experiment_spec(const std::string& path) {
    TextConfig cfg = TextConfig::parse_file(path);
    ExperimentSpec spec;
    std::filesystem::path base = std::filesystem::path(path).parent_path();

    std::string ds = cfg.get_str("dataset");
    std::filesystem::path ds_path(ds);
    if (ds_path.is_relative()) ds_path = base / ds_path;
    spec.dataset = load_dataset_config(ds_path.string());

    for (const auto* e : cfg.find_all("wiring")) {
        if (e->fields.empty()) throw ParseError(path, e->line, "wiring needs a value");
        std::string w = e->fields[0];
        if (!w.empty() && w.front() != '{') {
            std::filesystem::path wp(w);
            if (wp.is_relative()) wp = base / wp;
            w = wp.string();
        }
        spec.wirings.push_back(w);
    }
    spec.sweep = sweep_var_from_name(cfg.get_str("sweep", "none"));
    if (cfg.has("values")) spec.values = cfg.get_doubles("values");
    if (cfg.has("seeds")) {
        spec.seeds.clear();
        for (double s : cfg.get_doubles("seeds")) spec.seeds.push_back(static_cast<uint64_t>(s));
    }
    spec.budget = static_cast<int>(cfg.get_int("budget", 200));
    spec.patience = static_cast<int>(cfg.get_int("patience", 20));
    spec.min_delta = cfg.get_double("min_delta", 1e-5);
    spec.batch_size = static_cast<int>(cfg.get_int("batch", 128));
    if (const auto* e = cfg.find("baselines")) {
        for (const std::string& f : e->fields) {
            if (f == "ls")
                spec.baseline_ls = true;
            else if (f == "lmmse")
                spec.baseline_lmmse = true;
            else
                throw ParseError(path, e->line, "baselines must be among: ls lmmse");
        }
    }
    spec.figure = cfg.get_str("figure", "experiment");
    spec.out_dir = cfg.get_str("out_dir", ".");
    spec.workers = static_cast<int>(cfg.get_int("workers", 1));
    spec.trace = cfg.get_bool("trace", false);
    spec.validate();
    return spec;
}

}  // namespace chanfuse
