#include <doctest.h>

#include <cstdio>
#include <map>

#include "chanfuse/fusion.hpp"
#include "test_support.hpp"

using namespace chanfuse;

namespace {

// independent transcription of every network topology: which fusion stages
// exist and exactly which tap of which producer feeds them
const std::map<std::string, std::vector<std::string>> kExpectedStages = {
    {"{H}", {}},
    {"{L}", {}},
    {"{U}", {}},
    {"{P}", {}},
    {"{R}", {}},
    {"{S}", {}},
    {"{H,L}_d", {"Fus1: H.output L.output"}},
    {"{H,L}_f", {"Fus1: H.hidden L.hidden"}},
    {"{H,U}_d", {"Fus1: H.output U.output"}},
    {"{H,U}_f", {"Fus1: H.hidden U.hidden"}},
    {"{L,U}_d", {"Fus1: L.output U.output"}},
    {"{L,U}_f", {"Fus1: L.hidden U.hidden"}},
    {"{H,L,U}_d", {"Fus1: H.output L.output U.output"}},
    {"{H,L,U}_f", {"Fus1: H.hidden L.hidden U.hidden"}},
    {"{H,L,U}_h1", {"Fus1: H.hidden U.hidden", "Fus2: Fus1.output L.hidden"}},
    {"{H,L,U}_h2", {"Fus1: H.hidden U.hidden", "Fus2: Fus1.hidden L.hidden"}},
    {"{P,H}", {"Fus1: P.output H.hidden"}},
    {"{P,H,U}", {"Fus1: P.output H.hidden", "Fus2: Fus1.output U.hidden"}},
    {"{P,H,L,U}",
     {"Fus1: H.hidden U.hidden", "Fus2: Fus1.hidden L.hidden", "Fus3: Fus2.output P.output"}},
    {"{R,H,U}", {"Fus1: R.output H.hidden U.hidden"}},
    {"{R,H,L}", {"Fus1: R.output L.output H.hidden"}},
    {"{R,H,L,U}",
     {"Fus1: H.hidden U.hidden", "Fus2: Fus1.hidden L.hidden", "Fus3: Fus2.output R.output"}},
    {"{S,R}", {"Fus1: S.input R.output"}},
    {"{S,H}", {"Fus1: S.output H.hidden"}},
};

std::vector<std::string> realized_stages(const WiringSpec& w) {
    std::vector<std::string> out;
    for (const StageSpec& st : w.stages) {
        std::string line = st.name + ":";
        for (const StageInput& in : st.inputs) line += " " + in.producer + "." + tap_name(in.tap);
        out.push_back(line);
    }
    return out;
}

const Dataset& shared_dataset() {
    static Dataset ds = generate(test_support::mini_config());
    return ds;
}

TrainOptions quick_options(uint64_t seed = 1, int budget = 3) {
    TrainOptions opt;
    opt.epoch_budget = budget;
    opt.batch_size = 32;
    opt.patience = budget;
    opt.seed = seed;
    return opt;
}

}  // namespace

TEST_SUITE_BEGIN("fusion");

TEST_CASE("hyper-parameter table for the elementary stacks") {
    CHECK(branch_hyper("H").lstm == std::vector<int>{256, 256});
    CHECK(branch_hyper("H").lr == doctest::Approx(5e-4));
    CHECK(branch_hyper("L").dense == std::vector<int>{256, 256, 256, 256});
    CHECK(branch_hyper("L").lr == doctest::Approx(1e-4));
    CHECK(branch_hyper("U").dense == std::vector<int>{256, 256, 256});
    CHECK(branch_hyper("U").lr == doctest::Approx(1e-3));
    CHECK(branch_hyper("P").dense == std::vector<int>{256, 256, 256});
    CHECK(branch_hyper("S").dense == std::vector<int>{256});
    CHECK(branch_hyper("R").dense == std::vector<int>{256, 128, 128});
    CHECK(branch_hyper("R").conv_filters == std::vector<int>{16, 32, 8});
    CHECK(branch_hyper("R").conv_kernel == 5);
    CHECK(branch_hyper("Fus").dense == std::vector<int>{512, 512, 256});
}

TEST_CASE("every named wiring matches its expected stage/tap table and forward-passes") {
    const Dataset& ds = shared_dataset();
    const GraphDims dims = GraphDims::from_config(ds.config);
    std::vector<int> rows = {0, 1, 2};

    for (const std::string& name : named_wirings()) {
        CAPTURE(name);
        WiringSpec spec = wiring_preset(name);
        auto expected = kExpectedStages.find(name);
        REQUIRE(expected != kExpectedStages.end());
        CHECK(realized_stages(spec) == expected->second);

        FusionGraph graph(spec, dims, 11);
        const int want = name == "{P}" ? 2 * (dims.m - dims.m_fb) : 2 * dims.m;
        CHECK(graph.output_dim() == want);

        GraphBatch batch = graph.make_batch(ds.test, rows);
        FusionGraph::Forward fwd = graph.forward(batch);
        REQUIRE(fwd.terminal.shape() == nn::Shape{3, want});
        for (double v : fwd.terminal.values()) CHECK(std::isfinite(v));
    }
    CHECK(named_wirings().size() == 24);
}

TEST_CASE("unknown wirings are rejected") {
    CHECK_THROWS_AS(wiring_preset("{X}"), ConfigError);
    CHECK_THROWS_AS(wiring_preset("{H,L}_x"), ConfigError);
}

TEST_CASE("fusion input widths follow the tapped layers") {
    const Dataset& ds = shared_dataset();
    const GraphDims dims = GraphDims::from_config(ds.config);

    FusionGraph feature(wiring_preset("{H,L}_f"), dims, 1);
    CHECK(feature.stage(0).hidden[0].n_in == 256 + 256);  // hidden taps of H and L

    FusionGraph decision(wiring_preset("{H,L,U}_d"), dims, 1);
    CHECK(decision.stage(0).hidden[0].n_in == 3 * 2 * dims.m);  // three network outputs

    FusionGraph h2(wiring_preset("{H,L,U}_h2"), dims, 1);
    CHECK(h2.wiring().stages[0].name == "Fus1");
    CHECK(h2.wiring().stages[1].name == "Fus2");
    CHECK(h2.stage(1).hidden[0].n_in == 512 + 256);  // Fus1 middle layer + L hidden

    FusionGraph h1(wiring_preset("{H,L,U}_h1"), dims, 1);
    CHECK(h1.stage(1).hidden[0].n_in == 2 * dims.m + 256);  // Fus1 output + L hidden

    FusionGraph sr(wiring_preset("{S,R}"), dims, 1);
    CHECK(sr.stage(0).hidden[0].n_in == 2 * dims.m + 2 * dims.m);  // S input + R output
}

TEST_CASE("fus nets carry the dense 512,512,256 stack with a linear head") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{H,U}_f"), GraphDims::from_config(ds.config), 2);
    const FusNet& fus = g.stage(0);
    REQUIRE(fus.hidden.size() == 3);
    CHECK(fus.hidden[0].n_out == 512);
    CHECK(fus.hidden[1].n_out == 512);
    CHECK(fus.hidden[2].n_out == 256);
    CHECK(fus.out.n_out == 2 * g.dims().m);
    CHECK(fus.tap_index == 1);  // middle of three hidden layers
}

TEST_CASE("staged training of an elementary graph is plain training") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{U}"), GraphDims::from_config(ds.config), 5);
    TrainReport report = staged_train(g, ds.train, quick_options(5, 8));
    REQUIRE(report.stages.size() == 1);
    CHECK(report.stages[0].stage == "U");
    CHECK(report.stages[0].epochs >= 1);
    CHECK(report.freeze_verified);
    // training reduced the loss on a deterministic synthetic mapping
    CHECK(report.stages[0].train_loss.back() < report.stages[0].train_loss.front());
}

TEST_CASE("staged training freezes stage parameters bit-exactly") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{H,L,U}_h2"), GraphDims::from_config(ds.config), 6);
    TrainReport report = staged_train(g, ds.train, quick_options(6, 2));
    CHECK(report.freeze_verified);
    std::vector<std::string> names;
    for (const StageTrace& st : report.stages) names.push_back(st.stage);
    CHECK(names == std::vector<std::string>{"H", "U", "L", "Fus1", "Fus2"});
    for (const nn::NamedParam& p : g.all_params()) CHECK_FALSE(p.tensor.requires_grad());

    // a frozen graph yields identical predictions run to run
    auto p1 = predict(g, ds.test);
    auto p2 = predict(g, ds.test);
    REQUIRE(p1.size() == p2.size());
    for (size_t i = 0; i < p1.size(); ++i) CHECK(p1[i] == p2[i]);
}

TEST_CASE("zero budget for a trainable stage is a config error") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{L}"), GraphDims::from_config(ds.config), 2);
    TrainOptions opt = quick_options(1, 1);
    opt.epoch_budget = 0;
    CHECK_THROWS_AS(staged_train(g, ds.train, opt), ConfigError);
}

TEST_CASE("input-only branches are not trained") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{S,R}"), GraphDims::from_config(ds.config), 7);
    TrainReport report = staged_train(g, ds.train, quick_options(7, 2));
    std::vector<std::string> names;
    for (const StageTrace& st : report.stages) names.push_back(st.stage);
    CHECK(names == std::vector<std::string>{"R", "Fus1"});  // S contributes only its input
}

TEST_CASE("prediction with a full feedback mask returns the known channel") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{P}"), GraphDims::from_config(ds.config), 8);
    staged_train(g, ds.train, quick_options(8, 2));

    Sample full_mask = ds.test[0];
    const int m = ds.config.scene.num_antennas;
    full_mask.mask.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) full_mask.mask[static_cast<size_t>(i)] = i;
    full_mask.partial_known = full_mask.label.entries;
    full_mask.partial_unknown.clear();

    auto preds = predict(g, {full_mask});
    REQUIRE(preds.size() == 1);
    CHECK(nmse(preds[0], full_mask.label.entries) == 0.0);
}

TEST_CASE("elementary partial-channel prediction reassembles known entries") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{P}"), GraphDims::from_config(ds.config), 9);
    staged_train(g, ds.train, quick_options(9, 2));
    auto preds = predict(g, ds.test);
    for (size_t i = 0; i < preds.size(); ++i) {
        const Sample& s = ds.test[i];
        REQUIRE(preds[i].size() == s.label.entries.size());
        for (size_t k = 0; k < s.mask.size(); ++k)
            CHECK(preds[i][static_cast<size_t>(s.mask[k])] == s.partial_known[k]);
    }
}

TEST_CASE("untrained location net with zero biases maps zero input to the terminal bias") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{L}"), GraphDims::from_config(ds.config), 10);
    Sample s = ds.test[0];
    s.location = {0, 0, 0};
    auto preds = predict(g, {s});  // normalizers unfitted -> identity
    for (const cxd& v : preds[0]) CHECK(v == cxd(0.0, 0.0));
}

TEST_CASE("missing LS-estimate modality raises a branch-naming error") {
    DatasetConfig cfg = test_support::mini_config(20, 5, 2, /*t_p=*/4);  // T_p < M, no LS
    Dataset ds = generate(cfg);
    FusionGraph g(wiring_preset("{S}"), GraphDims::from_config(cfg), 3);
    try {
        predict(g, ds.test);
        FAIL("expected MissingModalityError");
    } catch (const MissingModalityError& e) {
        CHECK(std::string(e.what()).find("S") != std::string::npos);
    }
}

TEST_CASE("wiring files round-trip and drive building") {
    WiringSpec spec = wiring_preset("{P,H,L,U}");
    save_wiring(spec, "test_wiring.wiring");
    WiringSpec loaded = load_wiring("test_wiring.wiring");
    CHECK(loaded.name == spec.name);
    CHECK(loaded.level == spec.level);
    CHECK(realized_stages(loaded) == realized_stages(spec));
    REQUIRE(loaded.branches.size() == spec.branches.size());
    for (size_t i = 0; i < spec.branches.size(); ++i) {
        CHECK(loaded.branches[i].name == spec.branches[i].name);
        CHECK(loaded.branches[i].tap == spec.branches[i].tap);
        CHECK(loaded.branches[i].trainable == spec.branches[i].trainable);
    }
    const Dataset& ds = shared_dataset();
    FusionGraph g(loaded, GraphDims::from_config(ds.config), 4);
    CHECK(g.output_dim() == 2 * ds.config.scene.num_antennas);
    std::remove("test_wiring.wiring");
}

TEST_CASE("invalid wirings are rejected with specific reasons") {
    WiringSpec w;
    w.name = "bad";
    w.branches = {{"H", Tap::Output, true}, {"L", Tap::Output, true}};
    CHECK_THROWS_AS(w.validate(), ConfigError);  // multi-branch without stages

    w.stages = {{"Fus1", {{"H", Tap::Output}}}};
    CHECK_THROWS_AS(w.validate(), ConfigError);  // L never consumed

    w.stages = {{"Fus1", {{"H", Tap::Hidden}, {"L", Tap::Output}}}};
    CHECK_THROWS_AS(w.validate(), ConfigError);  // tap contradicts the branch declaration

    w.branches = {{"H", Tap::Output, true}, {"L", Tap::Output, false}};
    w.stages = {{"Fus1", {{"H", Tap::Output}, {"L", Tap::Output}}}};
    CHECK_THROWS_AS(w.validate(), ConfigError);  // non-trainable branch tapped at output
}

TEST_CASE("graph checkpoints restore identical predictions") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{H,U}_f"), GraphDims::from_config(ds.config), 12);
    staged_train(g, ds.train, quick_options(12, 2));
    auto before = predict(g, ds.test);
    g.save("test_graph.ckpt");
    FusionGraph loaded = FusionGraph::from_checkpoint("test_graph.ckpt");
    auto after = predict(loaded, ds.test);
    REQUIRE(before.size() == after.size());
    for (size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
    std::remove("test_graph.ckpt");
}

TEST_CASE("rx/pilot branch trains end to end at small scale") {
    const Dataset& ds = shared_dataset();
    FusionGraph g(wiring_preset("{R}"), GraphDims::from_config(ds.config), 13);
    TrainReport report = staged_train(g, ds.train, quick_options(13, 3));
    CHECK(report.stages[0].train_loss.back() < report.stages[0].train_loss.front());
    NmseResult res = evaluate(g, ds.test);
    CHECK(std::isfinite(res.value));
}

TEST_CASE("graph-level operation counts aggregate the layer formulas") {
    const Dataset& ds = shared_dataset();
    const GraphDims dims = GraphDims::from_config(ds.config);
    FusionGraph g(wiring_preset("{S}"), dims, 14);
    // dense 2M -> 256 -> 2M
    const int64_t expect = 2 * dims.m * 256 + 256 * 2 * dims.m;
    CHECK(graph_flops(g) == expect);

    FusionGraph h(wiring_preset("{H}"), dims, 14);
    const int64_t lstm1 = 4LL * dims.t_unit * 2 * dims.m * 256;
    const int64_t lstm2 = 4LL * dims.t_unit * 256 * 256;
    CHECK(graph_flops(h) == lstm1 + lstm2 + 256 * 2 * dims.m);
}

TEST_SUITE_END();
