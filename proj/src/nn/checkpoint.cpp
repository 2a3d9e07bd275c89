#include "dnr/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dnr/error.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

namespace dnr::nn {

namespace {

constexpr char kMagic[8] = {'D', 'N', 'R', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put_raw(std::string& out, const T& v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <class T>
    T get() {
        T v;
        take(&v, sizeof(T));
        return v;
    }
    void take(void* dst, std::size_t n) {
        if (pos_ + n > bytes_.size()) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_));
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }
    std::string str(std::size_t n) {
        std::string s(n, '\0');
        take(s.data(), n);
        return s;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const Mlp& Checkpoint::net(const std::string& name) const {
    for (const auto& [n, m] : nets)
        if (n == name) return m;
    throw ValidationError("checkpoint has no network named \"" + name + "\"");
}

void Checkpoint::put(const std::string& name, const Mlp& m) {
    for (auto& [n, existing] : nets)
        if (n == name) {
            existing = m;
            return;
        }
    nets.emplace_back(name, m);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out(kMagic, sizeof(kMagic));
    put_raw(out, Checkpoint::kVersion);
    const std::string meta = ckpt.meta.dump();
    put_raw(out, static_cast<std::uint64_t>(meta.size()));
    out += meta;
    put_raw(out, static_cast<std::uint32_t>(ckpt.nets.size()));
    for (const auto& [name, net] : ckpt.nets) {
        put_raw(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put_raw(out, static_cast<std::uint32_t>(net.layers.size()));
        for (const auto& layer : net.layers) {
            put_raw(out, static_cast<std::uint64_t>(layer.in()));
            put_raw(out, static_cast<std::uint64_t>(layer.out()));
            out.append(reinterpret_cast<const char*>(layer.w.data.data()), layer.w.data.size() * sizeof(double));
            out.append(reinterpret_cast<const char*>(layer.b.data()), layer.b.size() * sizeof(double));
        }
    }
    return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
    Reader in(bytes);
    char magic[sizeof(kMagic)];
    in.take(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw ParseError("not a checkpoint file (bad magic)");
    const auto version = in.get<std::uint32_t>();
    if (version != Checkpoint::kVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint ckpt;
    const auto meta_len = in.get<std::uint64_t>();
    try {
        ckpt.meta = nlohmann::json::parse(in.str(meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint metadata: ") + e.what());
    }
    const auto count = in.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name = in.str(in.get<std::uint32_t>());
        const auto layers = in.get<std::uint32_t>();
        Mlp net;
        for (std::uint32_t l = 0; l < layers; ++l) {
            const auto rows = in.get<std::uint64_t>();
            const auto cols = in.get<std::uint64_t>();
            if (!net.layers.empty() && net.layers.back().out() != rows)
                throw ParseError("checkpoint network \"" + name + "\": layer shapes do not chain");
            DenseLayer layer;
            layer.w = Matrix(rows, cols);
            layer.b.resize(cols);
            in.take(layer.w.data.data(), rows * cols * sizeof(double));
            in.take(layer.b.data(), cols * sizeof(double));
            net.layers.push_back(std::move(layer));
        }
        ckpt.nets.emplace_back(name, std::move(net));
    }
    if (!in.done()) throw ParseError("trailing bytes after checkpoint payload");
    return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write checkpoint " + path.string());
    const auto bytes = serialize_checkpoint(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace dnr::nn
