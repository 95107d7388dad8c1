#include "dsf/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace dsf {

namespace fs = std::filesystem;

namespace {

// Samples whose visible region is smaller than this are redrawn.
constexpr Eigen::Index kMinVisiblePixels = 64;

} // namespace

std::mt19937_64 sample_rng(std::uint64_t seed, std::uint64_t index)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return std::mt19937_64(seq);
}

Coefficients sample_coefficients(const MorphableModel& model, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd alpha(model.d_total());
    for (Eigen::Index k = 0; k < alpha.size(); ++k) {
        double z;
        do {
            z = normal(rng);
        } while (std::abs(z) > 3.0);
        alpha(k) = model.sigma(k) * z;
    }
    return Coefficients::from_stacked(alpha, model.d_id());
}

Pose sample_pose(std::mt19937_64& rng, const PoseRange& range, int height, int width, double focal_fraction)
{
    auto uniform = [&](double half) { return std::uniform_real_distribution<double>(-half, half)(rng); };
    EulerAngles angles;
    angles.yaw = uniform(range.yaw_deg);
    angles.pitch = uniform(range.pitch_deg);
    angles.roll = uniform(range.roll_deg);
    Pose pose;
    pose.rotation = rotation_from_euler(angles);
    pose.scale = focal_fraction * std::min(height, width) * (1.0 + uniform(0.05));
    pose.translation = Vector3d(0.5 * width + uniform(0.03 * width), 0.5 * height + uniform(0.03 * height), 0.0);
    return pose;
}

GeneratedSample generate_sample(const MorphableModel& model, const DatasetConfig& cfg, std::uint64_t index)
{
    std::mt19937_64 rng = sample_rng(cfg.seed, index);
    for (;;) {
        GeneratedSample s;
        s.label.coeffs = sample_coefficients(model, rng);
        s.label.pose = sample_pose(rng, cfg.pose_range, cfg.height, cfg.width, cfg.focal_fraction);
        const int n_occ = std::uniform_int_distribution<int>(0, std::max(0, cfg.max_occluders))(rng);
        for (int k = 0; k < n_occ; ++k) {
            std::uniform_real_distribution<double> frac(0.1, 0.35);
            const int w = static_cast<int>(frac(rng) * cfg.width);
            const int h = static_cast<int>(frac(rng) * cfg.height);
            const int x0 = std::uniform_int_distribution<int>(0, cfg.width - w)(rng);
            const int y0 = std::uniform_int_distribution<int>(0, cfg.height - h)(rng);
            s.label.occluders.push_back({x0, y0, x0 + w, y0 + h});
        }
        s.repr = render_representation(model, s.label.coeffs, s.label.pose, s.label.occluders, cfg.height, cfg.width);
        if (visible_count(s.repr) >= kMinVisiblePixels)
            return s;
    }
}

std::string sample_stem(std::uint64_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "sample_%06llu", static_cast<unsigned long long>(index));
    return buf;
}

std::vector<std::string> list_samples(const fs::path& dir)
{
    std::error_code ec;
    fs::directory_iterator it(dir, ec);
    if (ec)
        throw Error(ErrorCode::io_error, dir.string() + ": " + ec.message());
    std::vector<std::string> stems;
    for (const auto& entry : it) {
        const fs::path& p = entry.path();
        if (p.extension() == ".dsfm" && fs::exists(fs::path(p).replace_extension(".json")))
            stems.push_back(p.stem().string());
    }
    std::sort(stems.begin(), stems.end());
    return stems;
}

void make_dataset(const MorphableModel& model, const DatasetConfig& cfg, const fs::path& dir)
{
    if (cfg.count < 1)
        throw Error(ErrorCode::invalid_argument, "dataset count must be at least 1");
    if (cfg.height < 16 || cfg.width < 16)
        throw Error(ErrorCode::invalid_argument, "maps need at least 16 x 16 pixels");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw Error(ErrorCode::io_error, dir.string() + ": cannot create directory");
    parallel_for(static_cast<std::size_t>(cfg.count), [&](std::size_t i) {
        const GeneratedSample s = generate_sample(model, cfg, i);
        const std::string stem = sample_stem(i);
        save_maps(dir / (stem + ".dsfm"), to_channels(s.repr));
        save_label(dir / (stem + ".json"), s.label);
    });
}

int worker_count()
{
    if (const char* env = std::getenv("THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1)
            return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn)
{
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(worker_count()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                next = n;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t)
        pool.emplace_back(run);
    for (std::thread& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace dsf
