#include "xprompt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace xp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kModelMagic[4] = {'X', 'P', 'C', '1'};
constexpr char kSidecarMagic[4] = {'X', 'P', 'S', '1'};

void write_i32(std::ofstream& f, int32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

int32_t read_i32(std::ifstream& f, const std::filesystem::path& path) {
    int32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!f) {
        throw std::runtime_error("truncated file: " + path.string());
    }
    return v;
}

void write_string(std::ofstream& f, const std::string& s) {
    write_i32(f, static_cast<int32_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& f, const std::filesystem::path& path) {
    const int32_t n = read_i32(f, path);
    if (n < 0 || n > (1 << 20)) {
        throw std::runtime_error("bad string length in " + path.string());
    }
    std::string s(static_cast<size_t>(n), '\0');
    f.read(s.data(), n);
    if (!f) {
        throw std::runtime_error("truncated file: " + path.string());
    }
    return s;
}

void check_magic(std::ifstream& f, const char (&magic)[4], const std::filesystem::path& path) {
    char got[4] = {};
    f.read(got, 4);
    if (!f || !std::equal(got, got + 4, magic)) {
        throw std::runtime_error("bad file tag in " + path.string());
    }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w) {
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write checkpoint: " + path.string());
    }
    f.write(kModelMagic, 4);
    write_i32(f, w.config.n_layers);
    write_i32(f, w.config.n_heads);
    write_i32(f, w.config.d_model);
    write_i32(f, w.config.d_ffn);
    write_i32(f, w.config.max_seq_len);
    write_i32(f, w.config.vocab_size);
    write_i32(f, 0);  // extension rows never embed here; they ship as sidecars
    w.for_each_tensor([&](const Mat<float>& m) {
        f.write(reinterpret_cast<const char*>(m.a.data()),
                static_cast<std::streamsize>(m.a.size() * sizeof(float)));
    });
    if (!f) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

ModelWeights load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open checkpoint: " + path.string());
    }
    check_magic(f, kModelMagic, path);
    ModelConfig cfg;
    cfg.n_layers = read_i32(f, path);
    cfg.n_heads = read_i32(f, path);
    cfg.d_model = read_i32(f, path);
    cfg.d_ffn = read_i32(f, path);
    cfg.max_seq_len = read_i32(f, path);
    cfg.vocab_size = read_i32(f, path);
    cfg.validate();
    const int32_t n_ext = read_i32(f, path);
    if (n_ext != 0) {
        throw std::runtime_error("checkpoint embeds extension rows; expected sidecar files: " +
                                 path.string());
    }
    ModelWeights w = make_weights<float>(cfg);
    size_t payload = 0;
    w.for_each_tensor([&](Mat<float>& m) {
        f.read(reinterpret_cast<char*>(m.a.data()),
               static_cast<std::streamsize>(m.a.size() * sizeof(float)));
        payload += m.a.size() * sizeof(float);
    });
    if (!f) {
        throw std::runtime_error("checkpoint shorter than its declared shape: " + path.string());
    }
    f.peek();
    if (!f.eof()) {
        throw std::runtime_error("checkpoint longer than its declared shape: " + path.string());
    }
    (void)payload;
    return w;
}

void save_sidecar(const std::filesystem::path& path, const ImaginarySidecar& sidecar) {
    if (sidecar.row.empty()) {
        throw std::invalid_argument("sidecar row is empty");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot write sidecar: " + path.string());
    }
    f.write(kSidecarMagic, 4);
    write_i32(f, static_cast<int32_t>(sidecar.row.size()));
    write_string(f, sidecar.name);
    write_string(f, sidecar.provenance);
    f.write(reinterpret_cast<const char*>(sidecar.row.data()),
            static_cast<std::streamsize>(sidecar.row.size() * sizeof(float)));
    if (!f) {
        throw std::runtime_error("write failed: " + path.string());
    }
}

ImaginarySidecar load_sidecar(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("cannot open sidecar: " + path.string());
    }
    check_magic(f, kSidecarMagic, path);
    const int32_t d = read_i32(f, path);
    if (d <= 0) {
        throw std::runtime_error("bad sidecar row length in " + path.string());
    }
    ImaginarySidecar s;
    s.name = read_string(f, path);
    s.provenance = read_string(f, path);
    s.row.resize(static_cast<size_t>(d));
    f.read(reinterpret_cast<char*>(s.row.data()),
           static_cast<std::streamsize>(s.row.size() * sizeof(float)));
    if (!f) {
        throw std::runtime_error("truncated sidecar: " + path.string());
    }
    f.peek();
    if (!f.eof()) {
        throw std::runtime_error("sidecar longer than its declared shape: " + path.string());
    }
    return s;
}

}  // namespace xp
