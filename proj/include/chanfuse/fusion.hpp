#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chanfuse/dataset.hpp"
#include "chanfuse/layers.hpp"

namespace chanfuse {

enum class Tap { Hidden, Output, Input };
enum class FusionLevel { Elementary, Data, Feature, Decision, Hybrid };

std::string tap_name(Tap t);
Tap tap_from_name(const std::string& s);
std::string level_name(FusionLevel l);
FusionLevel level_from_name(const std::string& s);

struct BranchSpec {
    std::string name;       // H | L | U | P | R | S
    Tap tap = Tap::Output;  // tap its consumers read
    bool trainable = true;  // false: the branch only contributes its input
};

struct StageInput {
    std::string producer;  // branch name or an earlier stage name
    Tap tap = Tap::Output;
};

struct StageSpec {
    std::string name;  // Fus1..Fus3
    std::vector<StageInput> inputs;
};

/// Declarative network description: which elementary branches exist, and the
/// ordered fusion stages wiring taps together. The same structure drives
/// building, training and the structural-fidelity tests.
struct WiringSpec {
    std::string name;
    FusionLevel level = FusionLevel::Elementary;
    std::vector<BranchSpec> branches;
    std::vector<StageSpec> stages;

    const BranchSpec* find_branch(const std::string& n) const;
    void validate() const;
};

std::vector<std::string> named_wirings();
WiringSpec wiring_preset(const std::string& name);  // throws ConfigError on unknown names

WiringSpec load_wiring(const std::string& path);
void save_wiring(const WiringSpec& spec, const std::string& path);

/// Per-feature affine normalization fitted on the training split. Applies the
/// identity until fitted.
struct Standardizer {
    std::vector<double> mean, inv_std;

    bool fitted() const { return !mean.empty(); }
    void fit(const std::vector<double>& rows, int dim);
    void apply(std::vector<double>& rows, int dim) const;
    void invert_row(double* row, int dim) const;
};

struct GraphDims {
    int m = 0;
    int m_fb = 0;
    int t_unit = 0;
    int t_p = 0;

    static GraphDims from_config(const DatasetConfig& cfg);
};

/// Sizes and learning rates of the elementary stacks and fusion nets.
struct BranchHyper {
    std::vector<int> dense;         // hidden dense widths
    std::vector<int> lstm;          // hidden lstm widths
    std::vector<int> conv_filters;  // rx/pilot net conv chain
    int conv_kernel = 5;
    double lr = 5e-4;
};
BranchHyper branch_hyper(const std::string& name);  // "H".."S" and "Fus"

// ---- realized networks -----------------------------------------------------

struct FusNet {
    std::vector<nn::DenseLayer> hidden;  // LeakyReLU after each
    nn::DenseLayer out;                  // linear head
    int tap_index = 0;                   // middle hidden layer

    struct Out {
        nn::Tensor output;
        nn::Tensor hidden;
    };
    Out forward(const nn::Tensor& x) const;
    void collect(const std::string& prefix, std::vector<nn::NamedParam>& out) const;
};

/// Inputs of one branch for a batch of samples, already standardized.
struct BranchBatch {
    nn::Tensor flat;                // (N, d) main input
    std::vector<nn::Tensor> steps;  // recurrent branch: per-step (N, 2M) slices
    nn::Tensor conv;                // rx/pilot branch: (N, 2, M, T_p) pilot image
};

class BranchNet {
  public:
    enum class Kind { Dense, Lstm, Rx };

    static BranchNet build(const std::string& name, const GraphDims& dims, std::mt19937_64& rng);

    struct Out {
        nn::Tensor output;
        nn::Tensor hidden;
    };
    Out forward(const BranchBatch& in) const;

    Kind kind() const { return kind_; }
    const std::string& name() const { return name_; }
    double lr() const { return lr_; }
    int input_dim() const { return input_dim_; }    // flat input width
    int output_dim() const { return output_dim_; }  // 2M, or 2(M-M_fb) for P
    int hidden_dim() const { return hidden_dim_; }
    std::vector<nn::NamedParam> params(const std::string& prefix) const;
    std::vector<nn::LayerSpec> layer_specs() const;

  private:
    std::string name_;
    Kind kind_ = Kind::Dense;
    GraphDims dims_;
    double lr_ = 5e-4;
    int input_dim_ = 0, output_dim_ = 0, hidden_dim_ = 0;
    int hidden_tap_ = 0;  // middle hidden layer index, 0-based
    std::vector<nn::DenseLayer> dense_;
    std::vector<nn::LstmLayer> lstm_;
    std::vector<nn::Conv2dLayer> conv_;
    FusNet fus0_;  // rx/pilot branch merge
    nn::DenseLayer out_;
    int conv_flat_dim_ = 0;
};

struct GraphBatch {
    int rows = 0;
    std::map<std::string, BranchBatch> branches;
};

class FusionGraph {
  public:
    FusionGraph(WiringSpec spec, GraphDims dims, uint64_t seed);

    const WiringSpec& wiring() const { return spec_; }
    const GraphDims& dims() const { return dims_; }
    bool is_elementary() const { return spec_.stages.empty(); }
    const BranchNet& branch(const std::string& name) const;
    const FusNet& stage(size_t i) const { return stages_[i]; }

    int output_dim() const;
    int tap_dim(const StageInput& input) const;

    struct Forward {
        std::map<std::string, BranchNet::Out> branches;
        std::vector<FusNet::Out> stages;
        nn::Tensor terminal;
    };
    Forward forward(const GraphBatch& batch) const;

    /// Standardized input assembly for a set of samples (row subset optional).
    GraphBatch make_batch(const std::vector<Sample>& set, const std::vector<int>& rows) const;
    BranchBatch make_branch_batch(const std::string& branch, const std::vector<Sample>& set,
                                  const std::vector<int>& rows) const;
    nn::Tensor make_labels(const std::vector<Sample>& set, const std::vector<int>& rows,
                           bool p_label) const;

    void fit_normalizers(const std::vector<Sample>& train_set);

    std::vector<nn::NamedParam> branch_params(const std::string& name) const;
    std::vector<nn::NamedParam> stage_params(size_t i) const;
    std::vector<nn::NamedParam> all_params() const;

    std::vector<nn::LayerSpec> layer_specs() const;  // for complexity accounting

    Standardizer& input_norm(const std::string& key) { return norms_[key]; }
    const std::map<std::string, Standardizer>& norms() const { return norms_; }

    static FusionGraph from_checkpoint(const std::string& path);
    void save(const std::string& path, const std::string& dtype = "f64") const;

  private:
    WiringSpec spec_;
    GraphDims dims_;
    uint64_t seed_ = 0;
    std::vector<BranchNet> branches_;
    std::vector<FusNet> stages_;
    // keyed by branch name; "R.conv" for the pilot image, "label", "label_p"
    std::map<std::string, Standardizer> norms_;

    friend struct GraphAccess;
};

/// Inference on raw samples: forward, de-standardize, back to complex
/// channels. The elementary partial-channel net re-assembles known and
/// predicted entries (a full feedback mask short-circuits to the known part).
std::vector<std::vector<cxd>> predict(const FusionGraph& graph, const std::vector<Sample>& samples);

/// Test NMSE of the graph's predictions against the sample labels.
NmseResult evaluate(const FusionGraph& graph, const std::vector<Sample>& samples);

struct TrainOptions {
    int epoch_budget = 200;
    int batch_size = 128;
    double min_delta = 1e-5;  // plateau threshold on epoch-mean train loss
    int patience = 20;        // epochs without improvement before stopping
    uint64_t seed = 0;
    double lr_override = 0.0;  // > 0 replaces every stage's learning rate
    bool record_test_nmse = false;               // per-epoch traces on the terminal stage
    const std::vector<Sample>* test_set = nullptr;
};

struct StageTrace {
    std::string stage;
    std::vector<double> train_loss;  // per epoch
    std::vector<double> test_nmse;   // per epoch, only when recorded
    int epochs = 0;
};

struct TrainReport {
    std::vector<StageTrace> stages;
    int total_epochs = 0;
    bool freeze_verified = false;  // post-training bit-compare of frozen stages
};

/// Freeze-then-fuse training: elementary branches first (each to its own
/// label, then frozen), then the fusion stages in order, freezing each before
/// the next. Frozen producer taps are materialized once per stage, and frozen
/// parameters are verified bit-identical at the end.
TrainReport staged_train(FusionGraph& graph, const std::vector<Sample>& train_set,
                         const TrainOptions& opt);

int64_t graph_flops(const FusionGraph& graph);

}  // namespace chanfuse
