#include "dsf/io.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace dsf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void io_fail(const fs::path& path, const std::string& what)
{
    throw Error(ErrorCode::io_error, path.string() + ": " + what);
}

template <typename T>
T to_little(T v)
{
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

class Writer {
public:
    explicit Writer(const fs::path& path) : path_(path), out_(path, std::ios::binary)
    {
        if (!out_)
            io_fail(path, "cannot open for writing");
    }

    void magic(const char (&m)[5]) { out_.write(m, 4); }
    void u32(std::uint64_t v)
    {
        if (v > 0xffffffffu)
            io_fail(path_, "count exceeds 32 bits");
        const auto le = to_little(static_cast<std::uint32_t>(v));
        out_.write(reinterpret_cast<const char*>(&le), 4);
    }
    void f32(double v)
    {
        const auto le = to_little(static_cast<float>(v));
        out_.write(reinterpret_cast<const char*>(&le), 4);
    }
    void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

    ~Writer() noexcept(false)
    {
        out_.flush();
        if (!out_ && std::uncaught_exceptions() == 0)
            io_fail(path_, "write failed");
    }

private:
    fs::path path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const fs::path& path) : path_(path), in_(path, std::ios::binary)
    {
        if (!in_)
            io_fail(path, "cannot open for reading");
    }

    void expect_magic(const char (&m)[5])
    {
        char got[4];
        read(got, 4);
        if (std::memcmp(got, m, 4) != 0)
            io_fail(path_, std::string("bad magic, expected ") + m);
    }
    std::uint32_t u32()
    {
        std::uint32_t v;
        read(&v, 4);
        return to_little(v);
    }
    double f32()
    {
        float v;
        read(&v, 4);
        return static_cast<double>(to_little(v));
    }
    std::string bytes(std::size_t n)
    {
        std::string s(n, '\0');
        read(s.data(), n);
        return s;
    }
    bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

private:
    void read(void* dst, std::size_t n)
    {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            io_fail(path_, "truncated file");
    }

    fs::path path_;
    std::ifstream in_;
};

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        io_fail(path, "cannot open for reading");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        io_fail(path, e.what());
    }
}

void write_json(const fs::path& path, const json& j)
{
    std::ofstream out(path);
    if (!out)
        io_fail(path, "cannot open for writing");
    out << j.dump(2) << '\n';
    if (!out)
        io_fail(path, "write failed");
}

std::vector<double> to_list(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_list(const json& j)
{
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

} // namespace

void save_model(const fs::path& path, const MorphableModel& model)
{
    validate(model);
    Writer w(path);
    w.magic("DSF1");
    for (const auto v : {static_cast<std::uint64_t>(model.n_vertices()), static_cast<std::uint64_t>(model.d_id()),
                         static_cast<std::uint64_t>(model.d_exp()), static_cast<std::uint64_t>(model.triangles.size()),
                         static_cast<std::uint64_t>(model.nose_tip), static_cast<std::uint64_t>(model.eye_outer_left),
                         static_cast<std::uint64_t>(model.eye_outer_right)})
        w.u32(v);
    auto floats = [&](const auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i)
            w.f32(m.data()[i]);  // column-major storage
    };
    floats(model.mean);
    floats(model.basis_id);
    floats(model.basis_exp);
    floats(model.sigma);
    floats(model.uv);
    for (const Triangle& t : model.triangles)
        for (const auto v : t)
            w.u32(v);
}

MorphableModel load_model(const fs::path& path)
{
    Reader r(path);
    r.expect_magic("DSF1");
    const Eigen::Index n = r.u32(), d_id = r.u32(), d_exp = r.u32();
    const std::uint32_t n_tri = r.u32();
    MorphableModel model;
    model.nose_tip = r.u32();
    model.eye_outer_left = r.u32();
    model.eye_outer_right = r.u32();
    auto floats = [&](auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = r.f32();
    };
    model.mean.resize(3 * n);
    model.basis_id.resize(3 * n, d_id);
    model.basis_exp.resize(3 * n, d_exp);
    model.sigma.resize(d_id + d_exp);
    model.uv.resize(2, n);
    floats(model.mean);
    floats(model.basis_id);
    floats(model.basis_exp);
    floats(model.sigma);
    floats(model.uv);
    model.triangles.resize(n_tri);
    for (Triangle& t : model.triangles)
        for (auto& v : t)
            v = r.u32();
    try {
        validate(model);
    } catch (const Error& e) {
        io_fail(path, e.what());
    }
    return model;
}

void save_maps(const fs::path& path, const std::vector<MatrixXd>& channels)
{
    if (channels.empty())
        throw Error(ErrorCode::invalid_argument, "map container needs at least one channel");
    const Eigen::Index h = channels.front().rows(), w = channels.front().cols();
    for (const MatrixXd& c : channels)
        if (c.rows() != h || c.cols() != w)
            throw Error(ErrorCode::invalid_argument, "map channels differ in shape");
    Writer out(path);
    out.magic("DSFM");
    out.u32(static_cast<std::uint64_t>(h));
    out.u32(static_cast<std::uint64_t>(w));
    out.u32(channels.size());
    for (const MatrixXd& c : channels)
        for (Eigen::Index y = 0; y < h; ++y)
            for (Eigen::Index x = 0; x < w; ++x)
                out.f32(c(y, x));
}

std::vector<MatrixXd> load_maps(const fs::path& path)
{
    Reader r(path);
    r.expect_magic("DSFM");
    const Eigen::Index h = r.u32(), w = r.u32();
    const std::uint32_t c = r.u32();
    std::vector<MatrixXd> channels(c, MatrixXd(h, w));
    for (MatrixXd& m : channels)
        for (Eigen::Index y = 0; y < h; ++y)
            for (Eigen::Index x = 0; x < w; ++x)
                m(y, x) = r.f32();
    return channels;
}

std::vector<MatrixXd> to_channels(const ImageSpaceRepr& repr) { return {repr.cor_u, repr.cor_v, repr.dep, repr.seg, repr.cf}; }

ImageSpaceRepr repr_from_channels(const std::vector<MatrixXd>& channels)
{
    if (channels.size() != 5)
        throw Error(ErrorCode::invalid_argument, "image-space maps have five channels");
    return {channels[0], channels[1], channels[2], channels[3], channels[4]};
}

std::vector<MatrixXd> to_channels(const UvMaps& maps)
{
    std::vector<MatrixXd> out(maps.off.begin(), maps.off.end());
    out.insert(out.end(), maps.pos.begin(), maps.pos.end());
    out.push_back(maps.valid.cast<double>().matrix());
    return out;
}

UvMaps uv_maps_from_channels(const std::vector<MatrixXd>& channels)
{
    if (channels.size() != 7)
        throw Error(ErrorCode::invalid_argument, "uv maps have seven channels");
    UvMaps maps;
    for (std::size_t c = 0; c < 3; ++c) {
        maps.off[c] = channels[c];
        maps.pos[c] = channels[c + 3];
    }
    maps.valid = channels[6].array() > 0.5;
    return maps;
}

void save_label(const fs::path& path, const SampleLabel& label)
{
    json j;
    j["alpha_id"] = to_list(label.coeffs.id);
    j["alpha_exp"] = to_list(label.coeffs.exp);
    j["pose_vec"] = to_list(pose_to_vec(label.pose));
    j["occluders"] = json::array();
    for (const Occluder& o : label.occluders)
        j["occluders"].push_back({o.x0, o.y0, o.x1, o.y1});
    write_json(path, j);
}

SampleLabel load_label(const fs::path& path)
{
    const json j = read_json(path);
    try {
        SampleLabel label;
        label.coeffs = {from_list(j.at("alpha_id")), from_list(j.at("alpha_exp"))};
        const VectorXd pv = from_list(j.at("pose_vec"));
        if (pv.size() != 12)
            io_fail(path, "pose_vec must hold 12 numbers");
        label.pose = pose_from_vec(pv);
        for (const auto& o : j.value("occluders", json::array())) {
            const auto v = o.get<std::vector<int>>();
            if (v.size() != 4)
                io_fail(path, "occluders are [x0, y0, x1, y1]");
            label.occluders.push_back({v[0], v[1], v[2], v[3]});
        }
        return label;
    } catch (const json::exception& e) {
        io_fail(path, e.what());
    }
}

void save_obj(const fs::path& path, const Mesh& mesh, const std::vector<Triangle>& triangles)
{
    std::ofstream out(path);
    if (!out)
        io_fail(path, "cannot open for writing");
    out.precision(9);
    for (Eigen::Index i = 0; i < mesh.cols(); ++i)
        out << "v " << mesh(0, i) << ' ' << mesh(1, i) << ' ' << mesh(2, i) << '\n';
    for (const Triangle& t : triangles) {
        if (t[0] >= mesh.cols() || t[1] >= mesh.cols() || t[2] >= mesh.cols())
            throw Error(ErrorCode::invalid_argument, "triangle index outside the mesh");
        out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
    if (!out)
        io_fail(path, "write failed");
}

void save_checkpoint(const fs::path& path, const nn::PointNetLite& net)
{
    Writer w(path);
    w.magic("DSFN");
    auto tensor = [&](const std::string& name, const MatrixXd& value, bool vector) {
        w.u32(name.size());
        w.bytes(name);
        if (vector) {
            w.u32(1);
            w.u32(static_cast<std::uint64_t>(value.size()));
        } else {
            w.u32(2);
            w.u32(static_cast<std::uint64_t>(value.rows()));
            w.u32(static_cast<std::uint64_t>(value.cols()));
        }
        for (Eigen::Index r = 0; r < value.rows(); ++r)
            for (Eigen::Index c = 0; c < value.cols(); ++c)
                w.f32(value(r, c));
    };
    for (const nn::NamedTensor& t : net.parameters())
        tensor(t.name, t.value, t.value.cols() == 1 && t.name.ends_with(".bias"));
    tensor("output.scale", net.output_scale(), true);
}

nn::PointNetLite load_checkpoint(const fs::path& path)
{
    Reader r(path);
    r.expect_magic("DSFN");
    std::vector<nn::NamedTensor> params;
    VectorXd scale;
    while (!r.at_end()) {
        const std::uint32_t len = r.u32();
        if (len > 4096)
            io_fail(path, "implausible tensor name length");
        nn::NamedTensor t{r.bytes(len), {}};
        const std::uint32_t rank = r.u32();
        if (rank != 1 && rank != 2)
            io_fail(path, "tensor rank must be 1 or 2");
        const Eigen::Index rows = r.u32();
        const Eigen::Index cols = rank == 2 ? r.u32() : 1;
        t.value.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j)
                t.value(i, j) = r.f32();
        if (t.name == "output.scale")
            scale = t.value.col(0);
        else
            params.push_back(std::move(t));
    }
    if (params.empty())
        io_fail(path, "checkpoint holds no tensors");
    if (scale.size() == 0)
        scale = VectorXd::Ones(params.back().value.rows());
    try {
        return nn::PointNetLite::from_parameters(std::move(params), std::move(scale));
    } catch (const Error& e) {
        io_fail(path, e.what());
    }
}

void save_report(const fs::path& path, const MetricReport& report)
{
    json j;
    j["nme_dense_pct"] = report.nme_dense_pct;
    j["nme_rec_pct"] = report.nme_rec_pct;
    j["mae_yaw_deg"] = report.mae_yaw_deg;
    j["mae_pitch_deg"] = report.mae_pitch_deg;
    j["mae_roll_deg"] = report.mae_roll_deg;
    j["mae_mean_deg"] = report.mae_mean_deg;
    j["sample_count"] = report.sample_count;
    j["config"] = json::parse(report.config);
    write_json(path, j);
}

MetricReport load_report(const fs::path& path)
{
    const json j = read_json(path);
    try {
        MetricReport r;
        r.nme_dense_pct = j.at("nme_dense_pct").get<double>();
        r.nme_rec_pct = j.at("nme_rec_pct").get<double>();
        r.mae_yaw_deg = j.at("mae_yaw_deg").get<double>();
        r.mae_pitch_deg = j.at("mae_pitch_deg").get<double>();
        r.mae_roll_deg = j.at("mae_roll_deg").get<double>();
        r.mae_mean_deg = j.at("mae_mean_deg").get<double>();
        r.sample_count = j.at("sample_count").get<std::size_t>();
        r.config = j.value("config", json::object()).dump();
        return r;
    } catch (const json::exception& e) {
        io_fail(path, e.what());
    }
}

} // namespace dsf
