#pragma once

// Small synthetic datasets for fusion/experiment tests: an 8-antenna scene
// with a handful of scatterers keeps generation and training in milliseconds.

#include "chanfuse/dataset.hpp"

namespace test_support {

inline chanfuse::SceneConfig mini_scene(int m = 8, int p = 4, uint64_t seed = 7) {
    chanfuse::SceneConfig scene =
        chanfuse::make_random_scene(seed, 6, {5, -25, 0}, {55, 25, 14});
    scene.bs_position = {0, 0, 10};
    scene.num_antennas = m;
    scene.max_paths = p;
    scene.include_los = true;
    scene.validate();
    return scene;
}

inline chanfuse::DatasetConfig mini_config(int train = 60, int test = 20, int t_unit = 2,
                                           int t_p = 8, int m_fb = 6, uint64_t seed = 3) {
    chanfuse::DatasetConfig cfg;
    cfg.scene = mini_scene();
    cfg.area_min = {12, -18, 1.5};
    cfg.area_max = {48, 18, 1.5};
    cfg.train_count = train;
    cfg.test_count = test;
    cfg.t_unit = t_unit;
    cfg.t_p = t_p;
    cfg.m_fb = m_fb;
    cfg.traj_step = 0.02;
    cfg.snr_db = 20.0;
    cfg.label = {chanfuse::LabelMode::Perfect, 25.0};
    cfg.history = {chanfuse::LabelMode::Perfect, 25.0};
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

}  // namespace test_support
