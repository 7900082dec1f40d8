#include "plip/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace plip::ckpt {

namespace {
constexpr char kMagic[8] = {'P', 'L', 'I', 'P', 'C', 'K', 'P', 'T'};
}

std::uint64_t config_hash(const std::string& canonical) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : canonical) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

const Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save(const std::filesystem::path& path, const Checkpoint& ck) {
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["kind"] = ck.kind;
    header["config_hash"] = hash_hex(config_hash(ck.config_text));
    header["config"] = ck.config_text;
    header["global_step"] = ck.global_step;
    header["epoch"] = ck.epoch;
    header["vocab"] = ck.vocab;
    header["extra"] = ck.extra;
    auto& dir = header["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : ck.tensors) dir.push_back({{"name", name}, {"shape", t.shape()}});
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + tmp.string());
        out.write(kMagic, sizeof kMagic);
        const std::uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof len);
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& [name, t] : ck.tensors)
            out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        out.flush();
        if (!out) throw DataError("short write on checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + " is not a checkpoint");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError("truncated checkpoint header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt checkpoint header in " + path.string() + ": " + e.what());
    }
    if (header.value("format_version", 0) != kFormatVersion)
        throw DataError("unsupported checkpoint format version in " + path.string());

    Checkpoint ck;
    ck.kind = header.at("kind").get<std::string>();
    ck.config_text = header.at("config").get<std::string>();
    if (header.at("config_hash").get<std::string>() != hash_hex(config_hash(ck.config_text)))
        throw DataError("checkpoint config hash mismatch in " + path.string());
    ck.global_step = header.at("global_step").get<std::int64_t>();
    ck.epoch = header.value("epoch", std::int64_t{0});
    ck.vocab = header.at("vocab").get<std::vector<std::string>>();
    ck.extra = header.value("extra", nlohmann::json::object());
    for (const auto& entry : header.at("tensors")) {
        Tensor t(entry.at("shape").get<Shape>());
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw DataError("truncated tensor data in " + path.string());
        ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return ck;
}

void add_params(Checkpoint& ck, const nn::ParamStore& store, const std::string& prefix) {
    for (const auto& [name, v] : store.entries()) ck.tensors.emplace_back(prefix + name, v.value());
}

void restore_params(const Checkpoint& ck, nn::ParamStore& store, const std::string& prefix) {
    for (const auto& [name, v] : store.entries()) {
        const Tensor* t = ck.find(prefix + name);
        if (!t) throw ConfigError("checkpoint lacks tensor " + prefix + name);
        if (t->shape() != v.shape())
            throw ConfigError("checkpoint tensor " + prefix + name + " has shape " + shape_string(t->shape()) +
                              ", model expects " + shape_string(v.shape()));
        ag::Var(v).mutable_value() = *t;
    }
}

}  // namespace plip::ckpt
