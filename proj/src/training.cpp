#include <algorithm>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "chanfuse/fusion.hpp"

namespace chanfuse {

namespace {

constexpr int kEvalChunk = 512;

struct Matrix {
    int rows = 0, cols = 0;
    std::vector<double> data;

    nn::Tensor gather(const std::vector<int>& idx) const {
        std::vector<double> out(idx.size() * static_cast<size_t>(cols));
        for (size_t r = 0; r < idx.size(); ++r)
            std::copy(data.begin() + static_cast<size_t>(idx[r]) * cols,
                      data.begin() + static_cast<size_t>(idx[r] + 1) * cols,
                      out.begin() + r * static_cast<size_t>(cols));
        return nn::Tensor::from_values({static_cast<int>(idx.size()), cols}, std::move(out));
    }
};

Matrix from_tensor_rows(const nn::Tensor& t) {
    Matrix m;
    m.rows = t.shape()[0];
    m.cols = static_cast<int>(t.size() / m.rows);
    m.data = t.values();
    return m;
}

std::vector<int> iota_rows(size_t n) {
    std::vector<int> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    return rows;
}

std::vector<std::vector<int>> chunked(size_t n) {
    std::vector<std::vector<int>> chunks;
    for (size_t at = 0; at < n; at += kEvalChunk) {
        std::vector<int> rows;
        for (size_t i = at; i < std::min(n, at + kEvalChunk); ++i)
            rows.push_back(static_cast<int>(i));
        chunks.push_back(std::move(rows));
    }
    return chunks;
}

// frozen-producer taps materialized over the whole training set
using TapCache = std::map<std::string, Matrix>;

std::string tap_key(const StageInput& in) { return in.producer + "." + tap_name(in.tap); }

void cache_branch_taps(const FusionGraph& graph, const std::string& branch,
                       const std::vector<Sample>& set, TapCache& cache,
                       const std::set<std::string>& wanted) {
    const bool want_out = wanted.count(branch + ".output") != 0;
    const bool want_hidden = wanted.count(branch + ".hidden") != 0;
    const bool want_input = wanted.count(branch + ".input") != 0;
    if (!want_out && !want_hidden && !want_input) return;
    for (const std::vector<int>& rows : chunked(set.size())) {
        BranchBatch batch = graph.make_branch_batch(branch, set, rows);
        BranchNet::Out out;
        if (want_out || want_hidden) out = graph.branch(branch).forward(batch);
        auto append = [&](const std::string& key, const nn::Tensor& t) {
            Matrix part = from_tensor_rows(t);
            Matrix& dst = cache[key];
            if (dst.rows == 0) dst.cols = part.cols;
            dst.rows += part.rows;
            dst.data.insert(dst.data.end(), part.data.begin(), part.data.end());
        };
        if (want_out) append(branch + ".output", out.output);
        if (want_hidden) append(branch + ".hidden", out.hidden);
        if (want_input) append(branch + ".input", batch.flat);
    }
}

Matrix concat_cached(const TapCache& cache, const std::vector<StageInput>& inputs) {
    Matrix out;
    std::vector<const Matrix*> parts;
    int cols = 0;
    for (const StageInput& in : inputs) {
        auto it = cache.find(tap_key(in));
        if (it == cache.end()) throw ConfigError("internal: missing tap cache " + tap_key(in));
        parts.push_back(&it->second);
        cols += it->second.cols;
    }
    out.rows = parts.front()->rows;
    out.cols = cols;
    out.data.resize(static_cast<size_t>(out.rows) * cols);
    int at = 0;
    for (const Matrix* p : parts) {
        for (int r = 0; r < out.rows; ++r)
            std::copy(p->data.begin() + static_cast<size_t>(r) * p->cols,
                      p->data.begin() + static_cast<size_t>(r + 1) * p->cols,
                      out.data.begin() + static_cast<size_t>(r) * cols + at);
        at += p->cols;
    }
    return out;
}

struct Snapshot {
    std::string name;
    nn::Tensor tensor;
    std::vector<double> frozen_values;
};

void freeze(std::vector<nn::NamedParam> params, std::vector<Snapshot>& snapshots) {
    for (nn::NamedParam& p : params) {
        p.tensor.set_requires_grad(false);
        p.tensor.clear_grad();
        snapshots.push_back({p.name, p.tensor, p.tensor.values()});
    }
}

// generic single-stage loop over pre-materialized inputs
template <typename ForwardFn>
StageTrace run_stage(const std::string& stage_name, ForwardFn&& fwd_loss,
                     const std::vector<nn::NamedParam>& params, double lr, int n_rows,
                     const TrainOptions& opt, uint64_t shuffle_stream,
                     const std::function<double()>& test_nmse_fn) {
    if (opt.epoch_budget < 1)
        throw ConfigError("staged_train: epoch budget must be >= 1 for trainable stage " +
                          stage_name);
    nn::Adam adam(opt.lr_override > 0.0 ? opt.lr_override : lr);
    adam.register_params(params);

    StageTrace trace;
    trace.stage = stage_name;
    double best = std::numeric_limits<double>::infinity();
    int stall = 0;
    std::vector<int> order = iota_rows(static_cast<size_t>(n_rows));
    const int v = std::max(1, std::min(opt.batch_size, n_rows));
    const int n_batches = std::max(1, n_rows / v);  // trailing partial batch dropped

    for (int epoch = 0; epoch < opt.epoch_budget; ++epoch) {
        std::mt19937_64 rng(derive_seed(opt.seed, shuffle_stream, static_cast<uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (int bi = 0; bi < n_batches; ++bi) {
            std::vector<int> idx(order.begin() + static_cast<size_t>(bi) * v,
                                 order.begin() + static_cast<size_t>(bi + 1) * v);
            nn::Tensor loss = fwd_loss(idx);
            nn::backward(loss);
            adam.step();
            epoch_loss += loss.values()[0];
        }
        epoch_loss /= n_batches;
        trace.train_loss.push_back(epoch_loss);
        if (test_nmse_fn) trace.test_nmse.push_back(test_nmse_fn());
        ++trace.epochs;
        if (best - epoch_loss > opt.min_delta) {
            best = epoch_loss;
            stall = 0;
        } else if (++stall >= opt.patience) {
            break;
        }
    }
    return trace;
}

}  // namespace

std::vector<std::vector<cxd>> predict(const FusionGraph& graph,
                                      const std::vector<Sample>& samples) {
    const bool elementary_p = graph.is_elementary() && graph.wiring().branches[0].name == "P";
    std::vector<std::vector<cxd>> predictions(samples.size());

    std::vector<int> rows;
    for (size_t i = 0; i < samples.size(); ++i) {
        if (elementary_p && samples[i].partial_unknown.empty()) {
            // full feedback mask: nothing to predict, the known part is the channel
            predictions[i] = samples[i].partial_known;
            continue;
        }
        rows.push_back(static_cast<int>(i));
    }

    const std::string norm_key = elementary_p ? "label_p" : "label";
    auto norm_it = graph.norms().find(norm_key);
    const Standardizer* norm = norm_it != graph.norms().end() ? &norm_it->second : nullptr;

    for (size_t at = 0; at < rows.size(); at += kEvalChunk) {
        std::vector<int> chunk(rows.begin() + static_cast<long>(at),
                               rows.begin() + static_cast<long>(std::min(rows.size(),
                                                                         at + kEvalChunk)));
        GraphBatch batch = graph.make_batch(samples, chunk);
        FusionGraph::Forward fwd = graph.forward(batch);
        const int d = graph.output_dim();
        std::vector<double> vals = fwd.terminal.values();
        for (size_t r = 0; r < chunk.size(); ++r) {
            double* row = vals.data() + r * static_cast<size_t>(d);
            if (norm) norm->invert_row(row, d);
            std::vector<cxd> pred = xi_inv(std::vector<double>(row, row + d));
            const Sample& s = samples[static_cast<size_t>(chunk[r])];
            if (elementary_p)
                pred = assemble_channel(s.partial_known, pred, s.mask, graph.dims().m);
            predictions[static_cast<size_t>(chunk[r])] = std::move(pred);
        }
    }
    return predictions;
}

NmseResult evaluate(const FusionGraph& graph, const std::vector<Sample>& samples) {
    std::vector<std::vector<cxd>> h_hat = predict(graph, samples);
    std::vector<std::vector<cxd>> h_ref;
    h_ref.reserve(samples.size());
    for (const Sample& s : samples) h_ref.push_back(s.label.entries);
    return nmse(h_hat, h_ref);
}

TrainReport staged_train(FusionGraph& graph, const std::vector<Sample>& train_set,
                         const TrainOptions& opt) {
    if (train_set.empty()) throw ConfigError("staged_train: empty training set");
    graph.fit_normalizers(train_set);

    const WiringSpec& wiring = graph.wiring();
    TrainReport report;
    std::vector<Snapshot> snapshots;
    const std::vector<int> all = iota_rows(train_set.size());
    uint64_t stage_stream = 1000;

    const bool terminal_trace = opt.record_test_nmse && opt.test_set != nullptr;
    auto terminal_nmse = [&]() { return evaluate(graph, *opt.test_set).value; };

    // stage 1: elementary branches, each against its own label, then frozen
    for (const BranchSpec& bspec : wiring.branches) {
        if (!bspec.trainable) continue;
        const BranchNet& net = graph.branch(bspec.name);
        const bool p_label = bspec.name == "P";
        Matrix labels = from_tensor_rows(graph.make_labels(train_set, all, p_label));
        BranchBatch full = graph.make_branch_batch(bspec.name, train_set, all);
        Matrix flat = from_tensor_rows(full.flat);
        Matrix conv;
        if (net.kind() == BranchNet::Kind::Rx) conv = from_tensor_rows(
            nn::Tensor::from_values({full.conv.shape()[0],
                                     static_cast<int>(full.conv.size() / full.conv.shape()[0])},
                                    full.conv.values()));

        auto fwd_loss = [&](const std::vector<int>& idx) {
            BranchBatch batch;
            batch.flat = flat.gather(idx);
            if (net.kind() == BranchNet::Kind::Lstm) {
                const int step = 2 * graph.dims().m;
                const auto& fv = batch.flat.values();
                for (int t = 0; t < graph.dims().t_unit; ++t) {
                    std::vector<double> sv(idx.size() * static_cast<size_t>(step));
                    for (size_t r = 0; r < idx.size(); ++r)
                        std::copy(fv.begin() + static_cast<long>(r * static_cast<size_t>(flat.cols)) + t * step,
                                  fv.begin() + static_cast<long>(r * static_cast<size_t>(flat.cols)) + (t + 1) * step,
                                  sv.begin() + static_cast<long>(r * static_cast<size_t>(step)));
                    batch.steps.push_back(nn::Tensor::from_values(
                        {static_cast<int>(idx.size()), step}, std::move(sv)));
                }
            }
            if (net.kind() == BranchNet::Kind::Rx) {
                nn::Tensor c = conv.gather(idx);
                batch.conv = nn::reshape(c, {static_cast<int>(idx.size()), 2, graph.dims().m,
                                             graph.dims().t_p});
            }
            return nn::mse_loss(net.forward(batch).output, labels.gather(idx));
        };

        const bool trace_this = terminal_trace && graph.is_elementary();
        report.stages.push_back(run_stage(
            bspec.name, fwd_loss, graph.branch_params(bspec.name), net.lr(), flat.rows, opt,
            stage_stream++, trace_this ? std::function<double()>(terminal_nmse)
                                       : std::function<double()>()));
        freeze(graph.branch_params(bspec.name), snapshots);
    }

    // fusion stages consume frozen taps, materialized once per producer
    if (!wiring.stages.empty()) {
        std::set<std::string> wanted;
        for (const StageSpec& st : wiring.stages)
            for (const StageInput& in : st.inputs) wanted.insert(tap_key(in));

        TapCache cache;
        for (const BranchSpec& bspec : wiring.branches)
            cache_branch_taps(graph, bspec.name, train_set, cache, wanted);

        Matrix labels = from_tensor_rows(graph.make_labels(train_set, all, false));
        for (size_t k = 0; k < wiring.stages.size(); ++k) {
            const StageSpec& st = wiring.stages[k];
            Matrix inputs = concat_cached(cache, st.inputs);
            const FusNet& fus = graph.stage(k);
            auto fwd_loss = [&](const std::vector<int>& idx) {
                return nn::mse_loss(fus.forward(inputs.gather(idx)).output, labels.gather(idx));
            };
            const bool trace_this = terminal_trace && k + 1 == wiring.stages.size();
            report.stages.push_back(run_stage(
                st.name, fwd_loss, graph.stage_params(k), branch_hyper("Fus").lr, inputs.rows, opt,
                stage_stream++, trace_this ? std::function<double()>(terminal_nmse)
                                           : std::function<double()>()));
            freeze(graph.stage_params(k), snapshots);

            // later stages may tap this stage's output or hidden layer
            const std::string out_key = st.name + ".output";
            const std::string hid_key = st.name + ".hidden";
            if (wanted.count(out_key) || wanted.count(hid_key)) {
                for (const std::vector<int>& rows : chunked(static_cast<size_t>(inputs.rows))) {
                    FusNet::Out out = fus.forward(inputs.gather(rows));
                    auto append = [&](const std::string& key, const nn::Tensor& t) {
                        Matrix part = from_tensor_rows(t);
                        Matrix& dst = cache[key];
                        if (dst.rows == 0) dst.cols = part.cols;
                        dst.rows += part.rows;
                        dst.data.insert(dst.data.end(), part.data.begin(), part.data.end());
                    };
                    if (wanted.count(out_key)) append(out_key, out.output);
                    if (wanted.count(hid_key)) append(hid_key, out.hidden);
                }
            }
        }
    }

    // the freeze contract: nothing trained earlier may have moved
    for (const Snapshot& snap : snapshots) {
        const std::vector<double>& now = snap.tensor.values();
        if (now.size() != snap.frozen_values.size() ||
            std::memcmp(now.data(), snap.frozen_values.data(), now.size() * sizeof(double)) != 0)
            throw std::logic_error("staged_train: frozen parameter '" + snap.name + "' changed");
    }
    report.freeze_verified = true;
    for (const StageTrace& t : report.stages) report.total_epochs += t.epochs;
    return report;
}

}  // namespace chanfuse
