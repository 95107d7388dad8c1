#include "dsf/dataset.hpp"
#include "dsf/fit.hpp"
#include "dsf/io.hpp"
#include "dsf/metrics.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fstream>
#include <iostream>
#include <mutex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fs = std::filesystem;
using namespace dsf;

namespace {

struct FitOptions {
    fs::path model, maps, net, out;
    std::string solver = "ls";
    int m = 1024;
    double theta = kDefaultTheta;
    double lambda = 1e-4;
    std::uint64_t seed = 0;
    bool no_align = false, no_cor = false, no_cf = false;
};

SolverConfig solver_config(const std::string& kind, double lambda, bool no_align, bool no_cor, bool no_cf)
{
    SolverConfig cfg;
    cfg.kind = kind == "pointnet" ? SolverKind::pointnet : SolverKind::least_squares;
    cfg.lambda = lambda;
    cfg.use_align = !no_align;
    cfg.use_cor = !no_cor;
    cfg.use_cf = !no_cf;
    return cfg;
}

nlohmann::json read_json_file(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::io_error, path.string() + ": cannot open for reading");
    const auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded())
        throw Error(ErrorCode::io_error, path.string() + ": invalid JSON");
    return j;
}

VectorXd read_vector(const nlohmann::json& j, const char* key, const fs::path& path)
{
    if (!j.contains(key))
        throw Error(ErrorCode::io_error, path.string() + ": missing " + key);
    const auto v = j[key].get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Coefficients read_coeffs(const fs::path& path)
{
    const auto j = read_json_file(path);
    return {read_vector(j, "alpha_id", path), read_vector(j, "alpha_exp", path)};
}

Pose read_pose(const fs::path& path)
{
    const VectorXd v = read_vector(read_json_file(path), "pose_vec", path);
    if (v.size() != 12)
        throw Error(ErrorCode::io_error, path.string() + ": pose_vec must hold 12 numbers");
    return pose_from_vec(v);
}

void run_fit(const FitOptions& o)
{
    const MorphableModel model = load_model(o.model);
    const SolverConfig solver = solver_config(o.solver, o.lambda, o.no_align, o.no_cor, o.no_cf);
    nn::PointNetLite net;
    if (solver.kind == SolverKind::pointnet) {
        if (o.net.empty())
            throw Error(ErrorCode::invalid_argument, "--net is required for the pointnet solver");
        net = load_checkpoint(o.net);
        if (net.input_width() != solver.feature_width() || net.output_width() != model.d_total())
            throw Error(ErrorCode::invalid_argument, "network shape does not match the model and input flags");
    }
    const UvIndex index(model);

    std::vector<std::pair<fs::path, fs::path>> jobs;
    if (fs::is_directory(o.maps)) {
        fs::create_directories(o.out);
        for (const std::string& stem : list_samples(o.maps))
            jobs.emplace_back(o.maps / (stem + ".dsfm"), o.out / (stem + ".json"));
    } else {
        jobs.emplace_back(o.maps, o.out);
    }

    std::mutex log;
    parallel_for(jobs.size(), [&](std::size_t i) {
        const ImageSpaceRepr repr = repr_from_channels(load_maps(jobs[i].first));
        SamplerConfig sampler{o.m, o.theta, o.seed + i};
        const PostProcessResult r = post_process(repr, model, sampler, solver, &net, &index);
        save_label(jobs[i].second, {r.coeffs, r.pose, {}});
        std::lock_guard lock(log);
        std::cout << jobs[i].first.filename().string() << " -> " << jobs[i].second.string() << '\n';
    });
}

} // namespace

int main(int argc, char** argv)
{
#if defined(__GLIBC__)
    // Training allocates many short-lived medium-sized buffers.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"Image-space face geometry toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    int n = 2048, d_id = 20, d_exp = 8;
    fs::path out;
    auto* synth = app.add_subcommand("synth-model", "Synthesize a toy morphable model");
    synth->add_option("--seed", seed);
    synth->add_option("--n", n, "vertex count");
    synth->add_option("--did", d_id, "identity dimensions");
    synth->add_option("--dexp", d_exp, "expression dimensions");
    synth->add_option("--out", out)->required();

    fs::path model_path, dataset_dir;
    DatasetConfig dcfg;
    auto* mk = app.add_subcommand("make-dataset", "Render ground-truth maps and labels");
    mk->add_option("--model", model_path)->required();
    mk->add_option("--count", dcfg.count)->required();
    mk->add_option("--out", dataset_dir)->required();
    mk->add_option("--seed", dcfg.seed);
    mk->set_help_flag("--help", "Print this help message and exit");
    mk->add_option("--h", dcfg.height);
    mk->add_option("--w", dcfg.width);
    mk->add_option("--occluders", dcfg.max_occluders, "maximum occluders per sample");

    FitOptions fo;
    auto* fit = app.add_subcommand("fit", "Recover coefficients and pose from maps");
    fit->add_option("--model", fo.model)->required();
    fit->add_option("--maps", fo.maps, "map file or dataset directory")->required();
    fit->add_option("--solver", fo.solver)->check(CLI::IsMember({"ls", "pointnet"}));
    fit->add_option("--net", fo.net);
    fit->add_option("--m", fo.m);
    fit->add_option("--theta", fo.theta);
    fit->add_option("--lambda", fo.lambda);
    fit->add_option("--seed", fo.seed);
    fit->add_flag("--no-align", fo.no_align);
    fit->add_flag("--no-cor", fo.no_cor);
    fit->add_flag("--no-cf", fo.no_cf);
    fit->add_option("--out", fo.out, "label file, or directory when --maps is one")->required();

    fs::path net_out;
    nn::TrainConfig tcfg;
    tcfg.epochs = 40;
    int train_m = 256;
    bool t_no_align = false, t_no_cor = false, t_no_cf = false;
    auto* train = app.add_subcommand("train", "Train the point-cloud coefficient regressor");
    train->add_option("--model", model_path)->required();
    train->add_option("--dataset", dataset_dir)->required();
    train->add_option("--out-net", net_out)->required();
    train->add_option("--epochs", tcfg.epochs);
    train->add_option("--lr", tcfg.learning_rate);
    train->add_option("--batch", tcfg.batch_size);
    train->add_option("--seed", tcfg.seed);
    train->add_option("--w-alpha", tcfg.weights.w_alpha);
    train->add_option("--w-cons", tcfg.weights.w5);
    train->add_option("--m", train_m);
    train->add_flag("--no-align", t_no_align);
    train->add_flag("--no-cor", t_no_cor);
    train->add_flag("--no-cf", t_no_cf);

    fs::path pred_dir, report_path;
    auto* eval = app.add_subcommand("eval", "Score predicted labels against ground truth");
    eval->add_option("--model", model_path)->required();
    eval->add_option("--dataset", dataset_dir)->required();
    eval->add_option("--pred-dir", pred_dir)->required();
    eval->add_option("--report", report_path)->required();

    fs::path coeffs_path, pose_path;
    auto* obj = app.add_subcommand("export-obj", "Write a mesh as OBJ");
    obj->add_option("--model", model_path)->required();
    obj->add_option("--coeffs", coeffs_path, "JSON with alpha_id and alpha_exp")->required();
    obj->add_option("--pose", pose_path, "JSON with pose_vec; canonical view when omitted");
    obj->add_option("--out", out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            save_model(out, synthesize_model(seed, n, d_id, d_exp));
        } else if (*mk) {
            make_dataset(load_model(model_path), dcfg, dataset_dir);
        } else if (*fit) {
            run_fit(fo);
        } else if (*train) {
            const MorphableModel model = load_model(model_path);
            const SolverConfig solver = solver_config("pointnet", 0.0, t_no_align, t_no_cor, t_no_cf);
            const UvIndex index(model);
            const auto basis = std::make_shared<const MatrixXd>(model.stacked_basis());
            const std::vector<std::string> stems = list_samples(dataset_dir);
            if (stems.empty())
                throw Error(ErrorCode::invalid_argument, "dataset has no samples");
            std::vector<nn::TrainSample> samples(stems.size());
            parallel_for(stems.size(), [&](std::size_t i) {
                const ImageSpaceRepr repr = repr_from_channels(load_maps(dataset_dir / (stems[i] + ".dsfm")));
                const SampleLabel label = load_label(dataset_dir / (stems[i] + ".json"));
                SamplerConfig sampler{train_m, kDefaultTheta, tcfg.seed + i};
                SolverConfig s = solver;
                s.use_cons_loss = tcfg.weights.w5 > 0.0;
                samples[i] = make_train_sample(repr, model, label.coeffs, sampler, s, index, basis);
            });
            nn::PointNetLite net(solver.feature_width(), static_cast<int>(model.d_total()), tcfg.seed);
            net.output_scale() = model.sigma;
            nn::train(net, samples, tcfg, [](int epoch, double loss) {
                std::cout << "epoch " << epoch << " loss " << loss << std::endl;
            });
            save_checkpoint(net_out, net);
        } else if (*eval) {
            const MorphableModel model = load_model(model_path);
            double dense = 0, rec = 0;
            std::vector<Pose> pred_poses, gt_poses;
            for (const std::string& stem : list_samples(dataset_dir)) {
                const fs::path pred_file = pred_dir / (stem + ".json");
                if (!fs::exists(pred_file))
                    continue;
                const SampleLabel gt = load_label(dataset_dir / (stem + ".json"));
                const SampleLabel pred = load_label(pred_file);
                dense += nme_dense(project_relative(model, pred.coeffs, pred.pose),
                                   project_relative(model, gt.coeffs, gt.pose));
                rec += nme_reconstruction(shape_from_coeffs(model, pred.coeffs), shape_from_coeffs(model, gt.coeffs),
                                          model);
                pred_poses.push_back(pred.pose);
                gt_poses.push_back(gt.pose);
            }
            if (gt_poses.empty())
                throw Error(ErrorCode::invalid_argument, "no predictions match the dataset");
            const PoseMae mae = pose_mae(pred_poses, gt_poses);
            MetricReport report;
            report.sample_count = gt_poses.size();
            report.nme_dense_pct = dense / static_cast<double>(report.sample_count);
            report.nme_rec_pct = rec / static_cast<double>(report.sample_count);
            report.mae_yaw_deg = mae.yaw;
            report.mae_pitch_deg = mae.pitch;
            report.mae_roll_deg = mae.roll;
            report.mae_mean_deg = mae.mean;
            report.config = nlohmann::json{{"model", model_path.string()},
                                           {"dataset", dataset_dir.string()},
                                           {"pred_dir", pred_dir.string()}}
                                .dump();
            save_report(report_path, report);
            std::cout << nlohmann::json::parse(report.config).dump() << '\n'
                      << "samples " << report.sample_count << " nme_dense " << report.nme_dense_pct << "% nme_rec "
                      << report.nme_rec_pct << "% mae " << report.mae_mean_deg << " deg\n";
        } else if (*obj) {
            const MorphableModel model = load_model(model_path);
            Mesh mesh = shape_from_coeffs(model, read_coeffs(coeffs_path));
            if (!pose_path.empty())
                mesh = project(mesh, read_pose(pose_path));
            save_obj(out, mesh, model.triangles);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
