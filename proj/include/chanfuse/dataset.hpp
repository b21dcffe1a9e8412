#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chanfuse/estimators.hpp"
#include "chanfuse/scene.hpp"

namespace chanfuse {

enum class LabelMode { Perfect, Lmmse };
enum class MaskMode { Prefix, Random };

struct EstimatorSpec {
    LabelMode mode = LabelMode::Lmmse;
    double snr_db = 25.0;
};

struct DatasetConfig {
    SceneConfig scene;
    std::string scene_file;  // provenance echo, may be empty
    Vec3 area_min{10.0, -20.0, 1.5};
    Vec3 area_max{50.0, 20.0, 1.5};
    int train_count = 9000;
    int test_count = 1000;
    int t_unit = 3;
    int t_p = 64;
    int m_fb = 48;
    MaskMode mask_mode = MaskMode::Prefix;
    double traj_step = 1.0;  // meters between adjacent coherent-period positions
    double snr_db = 25.0;    // SNR of the received-signal modality
    EstimatorSpec label;     // how label channels are produced
    EstimatorSpec history;   // how history/uplink channels are produced
    double f_up = 2.50e9;
    double f_down = 2.62e9;
    uint64_t seed = 0;

    void validate() const;
};

/// One user's modality bundle. History is ordered most recent first; the
/// partial split is taken from the label channel.
struct Sample {
    long long user_id = 0;
    std::vector<ChannelVector> prev_channels;
    Vec3 location;
    ChannelVector uplink;
    PilotBlock pilots;
    RxSignal rx;
    std::optional<ChannelVector> ls_est;  // present iff T_p >= M
    std::vector<int> mask;
    std::vector<cxd> partial_known;
    std::vector<cxd> partial_unknown;
    ChannelVector label;
};

struct Dataset {
    DatasetConfig config;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

/// Deterministic sample generation: jittered-grid user positions, straight
/// -y trajectories, per-user derived noise streams, seeded disjoint split.
Dataset generate(const DatasetConfig& cfg);

void validate_sample(const Sample& s, const DatasetConfig& cfg);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct PathImport {
    std::map<long long, PathSet> users;
    std::vector<std::string> warnings;
};

/// Text import of externally generated path lists, one record per (user,
/// path): user_id alpha phi_deg tau_sec theta_az_deg theta_el_deg.
/// Per-user lists are sorted by amplitude and truncated to max_paths.
PathImport import_paths(const std::string& path, int max_paths);

DatasetConfig load_dataset_config(const std::string& path);
void save_dataset_config(const DatasetConfig& cfg, const std::string& path);

}  // namespace chanfuse
