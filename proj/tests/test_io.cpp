#include "fixtures.hpp"
#include "temp_dir.hpp"

#include "dsf/io.hpp"

#include "doctest.h"
#include "json.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

using namespace dsf;
namespace fs = std::filesystem;

namespace {

ErrorCode code_of(auto&& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return ErrorCode::invalid_argument;
}

template <typename Derived>
auto as_float(const Eigen::MatrixBase<Derived>& m)
{
    return m.template cast<float>().template cast<double>().eval();
}

std::string file_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_bytes(const fs::path& p, const std::string& bytes)
{
    std::ofstream out(p, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t u32_at(const std::string& b, std::size_t offset)
{
    std::uint32_t v;
    std::memcpy(&v, b.data() + offset, 4);
    return v;
}

float f32_at(const std::string& b, std::size_t offset)
{
    float v;
    std::memcpy(&v, b.data() + offset, 4);
    return v;
}

} // namespace

TEST_CASE("model file round trip and layout")
{
    const fixture::TempDir dir;
    const MorphableModel& m = fixture::small_face();
    save_model(dir / "m.dsf", m);
    const MorphableModel back = load_model(dir / "m.dsf");
    CHECK(back.mean == as_float(m.mean));
    CHECK(back.basis_id == as_float(m.basis_id));
    CHECK(back.basis_exp == as_float(m.basis_exp));
    CHECK(back.sigma == as_float(m.sigma));
    CHECK(back.uv == as_float(m.uv));
    CHECK(back.triangles == m.triangles);
    CHECK(back.nose_tip == m.nose_tip);
    CHECK(back.eye_outer_left == m.eye_outer_left);
    CHECK(back.eye_outer_right == m.eye_outer_right);

    const std::string b = file_bytes(dir / "m.dsf");
    const auto n = static_cast<std::size_t>(m.n_vertices());
    REQUIRE(b.substr(0, 4) == "DSF1");
    CHECK(u32_at(b, 4) == n);
    CHECK(u32_at(b, 8) == m.d_id());
    CHECK(u32_at(b, 12) == m.d_exp());
    CHECK(u32_at(b, 16) == m.triangles.size());
    CHECK(u32_at(b, 20) == m.nose_tip);
    const std::size_t mean_at = 32, basis_at = mean_at + 4 * 3 * n;
    CHECK(f32_at(b, mean_at + 4 * 5) == static_cast<float>(m.mean(5)));
    // Column-major basis: entry (row 7, column 2).
    CHECK(f32_at(b, basis_at + 4 * (2 * 3 * n + 7)) == static_cast<float>(m.basis_id(7, 2)));
    const std::size_t sigma_at = basis_at + 4 * 3 * n * static_cast<std::size_t>(m.d_total());
    CHECK(f32_at(b, sigma_at) == static_cast<float>(m.sigma(0)));
    const std::size_t uv_at = sigma_at + 4 * static_cast<std::size_t>(m.d_total());
    CHECK(f32_at(b, uv_at + 4 * 3) == static_cast<float>(m.uv(1, 1)));
    const std::size_t tri_at = uv_at + 4 * 2 * n;
    CHECK(u32_at(b, tri_at + 4 * 4) == m.triangles[1][1]);
    CHECK(b.size() == tri_at + 12 * m.triangles.size());
}

TEST_CASE("map container round trip and layout")
{
    const fixture::TempDir dir;
    const MorphableModel& m = fixture::small_face();
    const std::vector<Occluder> occ{{5, 5, 20, 30}};
    const ImageSpaceRepr r =
        render_representation(m, Coefficients::zero(m.d_id(), m.d_exp()), fixture::centred_pose(48), occ, 40, 48);
    save_maps(dir / "r.dsfm", to_channels(r));
    const ImageSpaceRepr back = repr_from_channels(load_maps(dir / "r.dsfm"));
    CHECK(back.cor_u == as_float(r.cor_u));
    CHECK(back.cor_v == as_float(r.cor_v));
    CHECK(back.dep == as_float(r.dep));
    CHECK(back.seg == r.seg);
    CHECK(back.cf == r.cf);

    const std::string b = file_bytes(dir / "r.dsfm");
    REQUIRE(b.substr(0, 4) == "DSFM");
    CHECK(u32_at(b, 4) == 40);
    CHECK(u32_at(b, 8) == 48);
    CHECK(u32_at(b, 12) == 5);
    // Channel 2 (dep), row 23, column 31.
    CHECK(f32_at(b, 16 + 4 * (2 * 40 * 48 + 23 * 48 + 31)) == static_cast<float>(r.dep(23, 31)));
    CHECK(b.size() == 16 + 4 * 5 * 40 * 48);

    CHECK(code_of([&] { repr_from_channels({r.seg}); }) == ErrorCode::invalid_argument);
    CHECK(code_of([&] { save_maps(dir / "x.dsfm", {MatrixXd::Zero(2, 2), MatrixXd::Zero(2, 3)}); }) ==
          ErrorCode::invalid_argument);
}

TEST_CASE("uv maps round trip")
{
    const fixture::TempDir dir;
    const MorphableModel& m = fixture::small_face();
    const UvMaps maps = to_uv_maps(m, Coefficients::zero(m.d_id(), m.d_exp()), fixture::centred_pose(64), 32, 32);
    const auto channels = to_channels(maps);
    REQUIRE(channels.size() == 7);
    save_maps(dir / "uv.dsfm", channels);
    const UvMaps back = uv_maps_from_channels(load_maps(dir / "uv.dsfm"));
    CHECK((back.valid == maps.valid).all());
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(back.off[c] == as_float(maps.off[c]));
        CHECK(back.pos[c] == as_float(maps.pos[c]));
    }
    CHECK(code_of([&] { uv_maps_from_channels({channels.begin(), channels.begin() + 5}); }) ==
          ErrorCode::invalid_argument);
}

TEST_CASE("label sidecar round trip")
{
    const fixture::TempDir dir;
    const MorphableModel& m = fixture::small_face();
    std::mt19937_64 rng(1);
    SampleLabel label;
    label.coeffs = fixture::random_coeffs(m, rng);
    label.pose.scale = 31.7;
    label.pose.rotation = rotation_from_euler({40.0, -12.0, 7.5});
    label.pose.translation = Vector3d(60.25, 70.5, -3.0);
    label.occluders = {{1, 2, 30, 40}, {0, 0, 5, 6}};
    save_label(dir / "l.json", label);
    const SampleLabel back = load_label(dir / "l.json");
    CHECK(back.coeffs.id == label.coeffs.id);
    CHECK(back.coeffs.exp == label.coeffs.exp);
    CHECK((pose_to_vec(back.pose) - pose_to_vec(label.pose)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(back.occluders.size() == 2);
    CHECK(back.occluders[0].x1 == 30);
    CHECK(back.occluders[1].y1 == 6);

    std::ifstream in(dir / "l.json");
    const auto j = nlohmann::json::parse(in);
    CHECK(j.at("pose_vec").size() == 12);
    CHECK(j.at("pose_vec")[3].get<double>() == label.pose.translation.x());
    CHECK(j.at("alpha_id").size() == static_cast<std::size_t>(m.d_id()));
    CHECK(j.at("occluders")[0] == nlohmann::json({1, 2, 30, 40}));

    write_bytes(dir / "bad.json", R"({"alpha_id": [1], "alpha_exp": [], "pose_vec": [1, 2]})");
    CHECK(code_of([&] { load_label(dir / "bad.json"); }) == ErrorCode::io_error);
    write_bytes(dir / "broken.json", "{\"alpha_id\": [");
    CHECK(code_of([&] { load_label(dir / "broken.json"); }) == ErrorCode::io_error);
    CHECK(code_of([&] { load_label(dir / "missing.json"); }) == ErrorCode::io_error);
}

TEST_CASE("checkpoint round trip and layout")
{
    const fixture::TempDir dir;
    nn::PointNetLite net(6, 9, 3);
    net.output_scale() = VectorXd::LinSpaced(9, 0.5, 2.5);
    save_checkpoint(dir / "n.dsfn", net);
    const nn::PointNetLite back = load_checkpoint(dir / "n.dsfn");
    REQUIRE(back.parameters().size() == net.parameters().size());
    for (std::size_t i = 0; i < net.parameters().size(); ++i) {
        CHECK(back.parameters()[i].name == net.parameters()[i].name);
        CHECK(back.parameters()[i].value == as_float(net.parameters()[i].value));
    }
    CHECK(back.output_scale() == as_float(net.output_scale()));

    const std::string b = file_bytes(dir / "n.dsfn");
    REQUIRE(b.substr(0, 4) == "DSFN");
    const std::uint32_t len = u32_at(b, 4);
    CHECK(b.substr(8, len) == "trunk0.weight");
    CHECK(u32_at(b, 8 + len) == 2);
    CHECK(u32_at(b, 12 + len) == 64);
    CHECK(u32_at(b, 16 + len) == 6);
    // Row-major weights: entry (1, 2).
    CHECK(f32_at(b, 20 + len + 4 * (1 * 6 + 2)) == static_cast<float>(net.parameters()[0].value(1, 2)));
}

TEST_CASE("report round trip is lossless")
{
    const fixture::TempDir dir;
    MetricReport r;
    r.nme_dense_pct = 0.1 + 0.2;
    r.nme_rec_pct = 1.0 / 3.0;
    r.mae_yaw_deg = 2.718281828459045;
    r.mae_pitch_deg = 1e-17;
    r.mae_roll_deg = 123456.789;
    r.mae_mean_deg = (r.mae_yaw_deg + r.mae_pitch_deg + r.mae_roll_deg) / 3.0;
    r.sample_count = 42;
    r.config = nlohmann::json{{"model", "m.dsf"}, {"lambda", 1e-4}}.dump();
    save_report(dir / "r.json", r);
    CHECK(load_report(dir / "r.json") == r);
}

TEST_CASE("damaged binary files")
{
    const fixture::TempDir dir;
    save_model(dir / "m.dsf", fixture::small_face());
    save_maps(dir / "r.dsfm", {MatrixXd::Ones(4, 4)});
    save_checkpoint(dir / "n.dsfn", nn::PointNetLite(3, 2, 0));

    for (const char* name : {"m.dsf", "r.dsfm", "n.dsfn"}) {
        const std::string good = file_bytes(dir / name);
        std::string bad = good;
        bad[0] = 'X';
        write_bytes(dir / "bad", bad);
        write_bytes(dir / "short", good.substr(0, good.size() - 3));
        if (std::string(name) == "m.dsf") {
            CHECK(code_of([&] { load_model(dir / "bad"); }) == ErrorCode::io_error);
            CHECK(code_of([&] { load_model(dir / "short"); }) == ErrorCode::io_error);
        } else if (std::string(name) == "r.dsfm") {
            CHECK(code_of([&] { load_maps(dir / "bad"); }) == ErrorCode::io_error);
            CHECK(code_of([&] { load_maps(dir / "short"); }) == ErrorCode::io_error);
        } else {
            CHECK(code_of([&] { load_checkpoint(dir / "bad"); }) == ErrorCode::io_error);
            CHECK(code_of([&] { load_checkpoint(dir / "short"); }) == ErrorCode::io_error);
        }
    }
    CHECK(code_of([&] { load_model(dir / "absent.dsf"); }) == ErrorCode::io_error);
    CHECK(code_of([&] { save_maps(dir.path() / "no" / "such" / "dir.dsfm", {MatrixXd::Ones(2, 2)}); }) ==
          ErrorCode::io_error);
}

TEST_CASE("OBJ export")
{
    const fixture::TempDir dir;
    Mesh mesh(3, 4);
    mesh << 0, 1, 0, 1,  //
        0, 0, 1, 1,      //
        0.5, 0.25, -0.125, 2;
    const std::vector<Triangle> tris{{0, 1, 2}, {1, 3, 2}};
    save_obj(dir / "o.obj", mesh, tris);
    std::ifstream in(dir / "o.obj");
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        lines.push_back(line);
    REQUIRE(lines.size() == 6);
    CHECK(lines[0] == "v 0 0 0.5");
    CHECK(lines[3] == "v 1 1 2");
    CHECK(lines[4] == "f 1 2 3");
    CHECK(lines[5] == "f 2 4 3");
    CHECK(code_of([&] { save_obj(dir / "x.obj", mesh, {{0, 1, 4}}); }) == ErrorCode::invalid_argument);
}
