#pragma once

#include "dsf/io.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace dsf {

struct PoseRange {
    double yaw_deg = 90;
    double pitch_deg = 45;
    double roll_deg = 45;
};

struct DatasetConfig {
    int count = 1;
    int height = 256;
    int width = 256;
    std::uint64_t seed = 0;
    int max_occluders = 2;
    PoseRange pose_range;
    double focal_fraction = 0.28;  // scale f as a fraction of min(H, W)
};

/// Independent generator for sample `index`, derived from (seed, index) only.
std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index);

/// alpha_k ~ Normal(0, sigma_k) truncated to |alpha_k| <= 3 sigma_k.
Coefficients sample_coefficients(const MorphableModel& model, std::mt19937_64& rng);

/// Uniform Euler angles within range; scale and a jittered centre from the image size.
Pose sample_pose(std::mt19937_64& rng, const PoseRange& range, int height, int width, double focal_fraction);

struct GeneratedSample {
    SampleLabel label;
    ImageSpaceRepr repr;
};

/// Deterministic sample `index` of the dataset described by cfg.
GeneratedSample generate_sample(const MorphableModel& model, const DatasetConfig& cfg, std::uint64_t index);

/// File stem of sample `index`; maps go to <stem>.dsfm and labels to <stem>.json.
std::string sample_stem(std::uint64_t index);

/// Stems of all samples in a dataset directory, sorted.
std::vector<std::string> list_samples(const std::filesystem::path& dir);

void make_dataset(const MorphableModel& model, const DatasetConfig& cfg, const std::filesystem::path& dir);

/// Worker count from the THREADS environment variable, else the hardware concurrency.
int worker_count();

/// Runs fn(i) for i in [0, n) on up to worker_count() threads; rethrows the first error.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace dsf
