#include "tcbm/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tcbm::io {

namespace {

struct Writer {
    std::ofstream out;
    explicit Writer(const std::string& path) : out(path, std::ios::binary) {
        if (!out) throw std::runtime_error("cannot open for writing: " + path);
    }
    void bytes(const void* p, std::size_t n) { out.write(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) {
        const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                                   static_cast<std::uint8_t>(v >> 16),
                                   static_cast<std::uint8_t>(v >> 24)};
        bytes(b, 4);
    }
    void f32(float v) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        u32(u);
    }
    void close(const std::string& path) {
        out.close();
        if (!out) throw std::runtime_error("write failed: " + path);
    }
};

struct Reader {
    std::vector<char> buf;
    std::size_t off = 0;
    explicit Reader(const std::string& path) {
        std::ifstream in(path, std::ios::binary | std::ios::ate);
        if (!in) throw std::runtime_error("cannot open for reading: " + path);
        buf.resize(static_cast<std::size_t>(in.tellg()));
        in.seekg(0);
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!in) throw std::runtime_error("read failed: " + path);
    }
    void need(std::size_t n, const char* what) const {
        if (off + n > buf.size()) throw FormatError(std::string("truncated ") + what, off);
    }
    void magic(const char expected[4]) {
        need(4, "magic");
        if (std::memcmp(buf.data() + off, expected, 4) != 0)
            throw FormatError("bad magic", off);
        off += 4;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[off++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        const auto* b = reinterpret_cast<const std::uint8_t*>(buf.data() + off);
        off += 4;
        return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
               (std::uint32_t(b[3]) << 24);
    }
    float f32(const char* what) {
        const std::uint32_t u = u32(what);
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    void done() const {
        if (off != buf.size()) throw FormatError("trailing bytes", off);
    }
};

}  // namespace

void save_dataset(const std::string& path, const pipeline::Dataset& data) {
    Writer w(path);
    w.bytes("TCDS", 4);
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(data.count()));
    w.u32(static_cast<std::uint32_t>(data.n_frames));
    w.u32(static_cast<std::uint32_t>(data.feature_dim));
    for (const MatrixF& seq : data.sequences)
        for (int n = 0; n < data.n_frames; ++n)
            for (int d = 0; d < data.feature_dim; ++d) w.f32(seq(n, d));
    w.close(path);
}

pipeline::Dataset load_dataset(const std::string& path) {
    Reader r(path);
    r.magic("TCDS");
    if (const auto v = r.u8("version"); v != 1)
        throw FormatError("unsupported dataset version " + std::to_string(v), r.off - 1);

    pipeline::Dataset data;
    const std::uint32_t count = r.u32("count");
    data.n_frames = static_cast<int>(r.u32("n_frames"));
    data.feature_dim = static_cast<int>(r.u32("feature_dim"));
    if (count == 0 || data.n_frames < 1 || data.feature_dim < 1)
        throw FormatError("degenerate dataset dimensions", 5);

    data.sequences.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        MatrixF seq(data.n_frames, data.feature_dim);
        for (int n = 0; n < data.n_frames; ++n)
            for (int d = 0; d < data.feature_dim; ++d) seq(n, d) = r.f32("sequence data");
        data.sequences.push_back(std::move(seq));
    }
    r.done();
    return data;
}

namespace {

void write_layer_arrays(Writer& w, const std::vector<nn::Mat<float>>& ws,
                        const std::vector<nn::Vec<float>>& bs) {
    for (std::size_t l = 0; l < ws.size(); ++l) {
        const auto& m = ws[l];
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) w.f32(m(i, j));
        for (int i = 0; i < bs[l].size(); ++i) w.f32(bs[l][i]);
    }
}

void read_layer_arrays(Reader& r, std::vector<nn::Mat<float>>& ws, std::vector<nn::Vec<float>>& bs,
                       const std::vector<int>& widths, const char* what) {
    ws.clear();
    bs.clear();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        nn::Mat<float> m(widths[l + 1], widths[l]);
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) m(i, j) = r.f32(what);
        nn::Vec<float> b(widths[l + 1]);
        for (int i = 0; i < b.size(); ++i) b[i] = r.f32(what);
        ws.push_back(std::move(m));
        bs.push_back(std::move(b));
    }
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    Writer w(path);
    w.bytes("TCVB", 4);
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(ckpt.model.widths.size()));
    for (int width : ckpt.model.widths) w.u32(static_cast<std::uint32_t>(width));
    w.u32(static_cast<std::uint32_t>(ckpt.model.temb.width));
    w.u32(static_cast<std::uint32_t>(ckpt.opt.step));
    write_layer_arrays(w, ckpt.model.weights, ckpt.model.biases);
    write_layer_arrays(w, ckpt.opt.m_w, ckpt.opt.m_b);
    write_layer_arrays(w, ckpt.opt.v_w, ckpt.opt.v_b);
    write_layer_arrays(w, ckpt.ema.weights, ckpt.ema.biases);
    w.close(path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r(path);
    r.magic("TCVB");
    if (const auto v = r.u8("version"); v != 1)
        throw FormatError("unsupported checkpoint version " + std::to_string(v), r.off - 1);

    const std::uint32_t n_widths = r.u32("width count");
    if (n_widths < 2 || n_widths > 64) throw FormatError("implausible width count", r.off - 4);
    std::vector<int> widths(n_widths);
    for (auto& width : widths) width = static_cast<int>(r.u32("width"));
    const int temb_width = static_cast<int>(r.u32("temb width"));
    const long adam_step = static_cast<long>(r.u32("adam step"));

    Checkpoint ckpt;
    ckpt.model.widths = widths;
    ckpt.model.temb.width = temb_width;
    read_layer_arrays(r, ckpt.model.weights, ckpt.model.biases, widths, "weights");
    ckpt.opt.step = adam_step;
    read_layer_arrays(r, ckpt.opt.m_w, ckpt.opt.m_b, widths, "first moments");
    read_layer_arrays(r, ckpt.opt.v_w, ckpt.opt.v_b, widths, "second moments");
    read_layer_arrays(r, ckpt.ema.weights, ckpt.ema.biases, widths, "ema weights");
    r.done();
    return ckpt;
}

void write_pgm_strip(const std::string& path, const MatrixF& sequence) {
    const int cell_w = 8;
    const int n = static_cast<int>(sequence.rows());
    const int d = static_cast<int>(sequence.cols());
    const int width = n * cell_w + (n - 1);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "P5\n" << width << " " << d << "\n255\n";
    std::vector<unsigned char> row(width);
    for (int y = 0; y < d; ++y) {
        int x = 0;
        for (int frame = 0; frame < n; ++frame) {
            const float v = std::clamp(sequence(frame, y), -1.0f, 1.0f);
            const auto g = static_cast<unsigned char>(std::lround((v + 1.0f) * 0.5f * 255.0f));
            for (int i = 0; i < cell_w; ++i) row[x++] = g;
            if (frame + 1 < n) row[x++] = 255;
        }
        out.write(reinterpret_cast<const char*>(row.data()), width);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void write_sidecar(const std::string& output_path,
                   const std::map<std::string, std::string>& cfg) {
    const std::string path = output_path + ".cfg.txt";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& [key, value] : cfg) out << key << "=" << value << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace tcbm::io
