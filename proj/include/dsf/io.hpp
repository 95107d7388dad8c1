#pragma once

#include "dsf/fusion.hpp"
#include "dsf/metrics.hpp"
#include "dsf/model.hpp"
#include "dsf/nn.hpp"
#include "dsf/raster.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dsf {

/// Ground truth (or a prediction) for one sample.
struct SampleLabel {
    Coefficients coeffs;
    Pose pose;
    std::vector<Occluder> occluders;
};

struct MetricReport {
    double nme_dense_pct = 0;
    double nme_rec_pct = 0;
    double mae_yaw_deg = 0;
    double mae_pitch_deg = 0;
    double mae_roll_deg = 0;
    double mae_mean_deg = 0;
    std::size_t sample_count = 0;
    std::string config = "{}";  // JSON object text echoed verbatim

    bool operator==(const MetricReport&) const = default;
};

// All binary formats are little-endian with 32-bit counts and floats.

void save_model(const std::filesystem::path& path, const MorphableModel& model);
MorphableModel load_model(const std::filesystem::path& path);

/// Channel-planar map container; every channel must have the same shape.
void save_maps(const std::filesystem::path& path, const std::vector<MatrixXd>& channels);
std::vector<MatrixXd> load_maps(const std::filesystem::path& path);

std::vector<MatrixXd> to_channels(const ImageSpaceRepr& repr);
ImageSpaceRepr repr_from_channels(const std::vector<MatrixXd>& channels);
std::vector<MatrixXd> to_channels(const UvMaps& maps);
UvMaps uv_maps_from_channels(const std::vector<MatrixXd>& channels);

void save_label(const std::filesystem::path& path, const SampleLabel& label);
SampleLabel load_label(const std::filesystem::path& path);

void save_obj(const std::filesystem::path& path, const Mesh& mesh, const std::vector<Triangle>& triangles);

void save_checkpoint(const std::filesystem::path& path, const nn::PointNetLite& net);
nn::PointNetLite load_checkpoint(const std::filesystem::path& path);

void save_report(const std::filesystem::path& path, const MetricReport& report);
MetricReport load_report(const std::filesystem::path& path);

} // namespace dsf
