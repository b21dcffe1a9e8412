#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "chanfuse/experiment.hpp"
#include "test_support.hpp"

using namespace chanfuse;

namespace {

ExperimentSpec mini_spec() {
    ExperimentSpec spec;
    spec.dataset = test_support::mini_config(50, 20);
    spec.wirings = {"{U}"};
    spec.seeds = {1};
    spec.budget = 3;
    spec.patience = 3;
    spec.batch_size = 32;
    spec.figure = "test";
    return spec;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_SUITE_BEGIN("experiment");

TEST_CASE("rerunning a spec reproduces the results CSV byte for byte") {
    ExperimentSpec spec = mini_spec();
    ExperimentResult a = run(spec);
    ExperimentResult b = run(spec);
    write_results_csv(a.rows, "test_a.csv");
    write_results_csv(b.rows, "test_b.csv");
    CHECK(read_bytes("test_a.csv") == read_bytes("test_b.csv"));
    std::remove("test_a.csv");
    std::remove("test_b.csv");
}

TEST_CASE("noiseless LS baseline row is exact") {
    ExperimentSpec spec = mini_spec();
    spec.dataset.snr_db = std::numeric_limits<double>::infinity();
    spec.baseline_ls = true;
    Dataset ds = generate(spec.dataset);
    auto rows = baseline_rows(spec, ds, 0.0);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].model == "LS");
    CHECK(rows[0].kind == "baseline");
    CHECK(rows[0].nmse <= 1e-12);
}

TEST_CASE("LMMSE baseline does not lose to LS at 0 dB") {
    ExperimentSpec spec = mini_spec();
    spec.dataset.train_count = 300;
    spec.dataset.test_count = 200;
    spec.dataset.snr_db = 0.0;
    spec.baseline_ls = true;
    spec.baseline_lmmse = true;
    Dataset ds = generate(spec.dataset);
    auto rows = baseline_rows(spec, ds, 0.0);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].model == "LMMSE");
    CHECK(rows[1].nmse <= rows[0].nmse * 1.01);
}

TEST_CASE("LS baseline requires enough pilots") {
    ExperimentSpec spec = mini_spec();
    spec.dataset.t_p = 4;  // below M = 8
    spec.baseline_ls = true;
    Dataset ds = generate(spec.dataset);
    CHECK_THROWS_AS(baseline_rows(spec, ds, 0.0), RankDeficiencyError);
}

TEST_CASE("results schema is fixed and versioned") {
    ExperimentSpec spec = mini_spec();
    ExperimentResult res = run(spec);
    write_results_csv(res.rows, "test_schema.csv");
    std::ifstream in("test_schema.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "schema,figure,model,kind,sweep_var,sweep_value,seed,nmse,nmse_excluded,flops,epochs,"
          "nan_flag");
    std::string first;
    std::getline(in, first);
    CHECK(first.find(kResultsSchema) == 0);
    in.close();
    std::remove("test_schema.csv");
}

TEST_CASE("a diverging cell is flagged and the run continues") {
    ExperimentSpec spec = mini_spec();
    spec.sweep = SweepVar::LearningRate;
    spec.values = {1e-3, 1e100};  // the second rate overflows the forward pass
    ExperimentResult res = run(spec);
    REQUIRE(res.rows.size() == 2);
    CHECK_FALSE(res.rows[0].nan_flag);
    CHECK(std::isfinite(res.rows[0].nmse));
    CHECK(res.rows[1].nan_flag);
    CHECK(res.any_nan);
}

TEST_CASE("learning-rate sweep records per-epoch traces") {
    ExperimentSpec spec = mini_spec();
    spec.sweep = SweepVar::LearningRate;
    spec.values = {1e-3, 1e-4};
    spec.trace = true;
    ExperimentResult res = run(spec);
    REQUIRE_FALSE(res.traces.empty());
    // one trace row per epoch per value, each carrying a finite test NMSE
    int with_nmse = 0;
    for (const TraceRow& t : res.traces)
        if (std::isfinite(t.test_nmse)) ++with_nmse;
    CHECK(with_nmse == static_cast<int>(res.traces.size()));
    write_trace_csv(res.traces, "test_trace.csv");
    std::ifstream in("test_trace.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "schema,figure,model,sweep_value,seed,stage,epoch,train_loss,test_nmse");
    in.close();
    std::remove("test_trace.csv");
}

TEST_CASE("snr sweep trains once and evaluates per test point") {
    ExperimentSpec spec = mini_spec();
    spec.dataset.snr_db = 10.0;
    spec.sweep = SweepVar::SnrDb;
    spec.values = {0.0, 10.0, 20.0};
    spec.wirings = {"{U}"};
    ExperimentResult res = run(spec);
    REQUIRE(res.rows.size() == 3);
    // {U} ignores the received signal, so its NMSE is SNR-invariant
    CHECK(res.rows[0].nmse == doctest::Approx(res.rows[1].nmse));
    CHECK(res.rows[1].nmse == doctest::Approx(res.rows[2].nmse));
    // all three rows share one training run
    CHECK(res.rows[0].epochs == res.rows[1].epochs);
}

TEST_CASE("t_unit sweep regenerates the dataset per value") {
    ExperimentSpec spec = mini_spec();
    spec.dataset.train_count = 40;
    spec.dataset.test_count = 10;
    spec.sweep = SweepVar::TUnit;
    spec.values = {1, 2};
    spec.wirings = {"{H}"};
    spec.budget = 2;
    ExperimentResult res = run(spec);
    REQUIRE(res.rows.size() == 2);
    // flops scale with the number of recurrent steps
    CHECK(res.rows[1].flops > res.rows[0].flops);
}

TEST_CASE("t_fb sweep interprets the budget per wiring family") {
    ExperimentSpec spec = mini_spec();
    spec.dataset.train_count = 40;
    spec.dataset.test_count = 10;
    spec.sweep = SweepVar::TFb;
    spec.values = {4, 6};
    spec.wirings = {"{P}"};
    spec.budget = 2;
    ExperimentResult res = run(spec);
    REQUIRE(res.rows.size() == 2);
    CHECK(res.rows[0].sweep_value == 4);
    CHECK(res.rows[1].sweep_value == 6);
    // the feedback budget trades input width for output width in this stack
    CHECK(res.rows[0].flops == res.rows[1].flops);
    for (const ResultRow& r : res.rows) CHECK(std::isfinite(r.nmse));

    // same sweep variable drives the pilot length for the received-signal family
    spec.wirings = {"{R}"};
    spec.values = {8, 16};
    ExperimentResult rres = run(spec);
    REQUIRE(rres.rows.size() == 2);
    CHECK(rres.rows[0].flops < rres.rows[1].flops);

    spec.wirings = {"{H}"};
    CHECK_THROWS_AS(run(spec), ConfigError);
}

TEST_CASE("summary rows aggregate the median over seeds") {
    ExperimentSpec spec = mini_spec();
    spec.seeds = {1, 2, 3};
    ExperimentResult res = run(spec);
    REQUIRE(res.rows.size() == 3);
    write_summary_csv(res.rows, "test_summary.csv");
    std::ifstream in("test_summary.csv");
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "schema,figure,model,kind,sweep_var,sweep_value,seeds,median_nmse");
    std::getline(in, line);
    CHECK(line.find(",3,") != std::string::npos);  // three seeds aggregated
    in.close();
    std::remove("test_summary.csv");

    std::vector<double> nmses = {res.rows[0].nmse, res.rows[1].nmse, res.rows[2].nmse};
    std::sort(nmses.begin(), nmses.end());
    CHECK(line.find(std::to_string(nmses[1]).substr(0, 6)) != std::string::npos);
}

TEST_CASE("experiment spec files parse and validate") {
    SceneConfig scene = test_support::mini_scene();
    save_scene(scene, "test_exp.scene");
    {
        std::ofstream out("test_exp.dcfg");
        out << "scene = test_exp.scene\narea_min = 12 -18 1.5\narea_max = 48 18 1.5\n"
            << "train_count = 20\ntest_count = 8\nt_unit = 2\nt_p = 8\nm_fb = 6\n"
            << "step = 0.05\nsnr_db = 20\nlabel = perfect\nseed = 4\n";
    }
    {
        std::ofstream out("test_exp.spec");
        out << "dataset = test_exp.dcfg\nwiring = {U}\nwiring = {L}\n"
            << "sweep = none\nseeds = 1 2\nbudget = 2\nfigure = demo\nbaselines = lmmse\n"
            << "workers = 2\n";
    }
    ExperimentSpec spec = load_experiment_spec("test_exp.spec");
    CHECK(spec.wirings == std::vector<std::string>{"{U}", "{L}"});
    CHECK(spec.seeds == std::vector<uint64_t>{1, 2});
    CHECK(spec.baseline_lmmse);
    CHECK_FALSE(spec.baseline_ls);
    CHECK(spec.workers == 2);

    ExperimentResult res = run(spec);
    CHECK(res.rows.size() == 1 + 2 * 2);  // one baseline + (2 wirings x 2 seeds)
    CHECK(res.rows[0].kind == "baseline");
    std::remove("test_exp.scene");
    std::remove("test_exp.dcfg");
    std::remove("test_exp.spec");
}

TEST_CASE("parallel workers reproduce the single-worker rows") {
    ExperimentSpec spec = mini_spec();
    spec.seeds = {1, 2, 3, 4};
    ExperimentResult serial = run(spec);
    spec.workers = 2;
    ExperimentResult parallel = run(spec);
    REQUIRE(serial.rows.size() == parallel.rows.size());
    for (size_t i = 0; i < serial.rows.size(); ++i) {
        CHECK(serial.rows[i].model == parallel.rows[i].model);
        CHECK(serial.rows[i].seed == parallel.rows[i].seed);
        CHECK(serial.rows[i].nmse == parallel.rows[i].nmse);
    }
}

TEST_SUITE_END();
