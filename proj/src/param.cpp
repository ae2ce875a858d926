#include "flare/param.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "flare/errors.hpp"

namespace flare {

ParamBlock& ParamSet::add(const std::string& name, std::size_t rows, std::size_t cols) {
    if (index_.count(name)) throw ContractViolation("duplicate param block: " + name);
    blocks_.emplace_back(name, rows, cols);
    index_[name] = blocks_.size() - 1;
    return blocks_.back();
}

ParamBlock& ParamSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("unknown param block: " + name);
    return blocks_[it->second];
}

const ParamBlock& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("unknown param block: " + name);
    return blocks_[it->second];
}

std::size_t ParamSet::total_values() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.value.size();
    return n;
}

void ParamSet::zero_grads() {
    for (auto& b : blocks_) b.grad.fill(0.0);
}

void adam_step(ParamSet& params, const AdamConfig& cfg, std::uint64_t t) {
    if (t == 0) throw ContractViolation("adam_step: step count t must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (auto& b : params.blocks_) {
        auto& v = b.value.data();
        auto& g = b.grad.data();
        auto& m = b.adam_m.data();
        auto& s = b.adam_v.data();
        for (std::size_t i = 0; i < v.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            s[i] = cfg.beta2 * s[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = m[i] / bc1;
            const double s_hat = s[i] / bc2;
            v[i] -= cfg.lr * m_hat / (std::sqrt(s_hat) + cfg.eps);
        }
        ensure_finite(v, "adam_step(" + b.name + ")");
    }
    params.bump_version();
}

namespace {

constexpr char kMagic[8] = {'F', 'L', 'R', 'C', 'K', 'P', 'T', '1'};

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <class T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw DataError("checkpoint: truncated file");
    return v;
}

void write_doubles(std::ostream& out, const Vec& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_doubles(std::istream& in, Vec& v) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint: truncated file");
}

void save_binary(const std::string& path, const ParamSet& params, const std::string& config_json) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint64_t>(out, params.step());
    write_pod<std::uint64_t>(out, config_json.size());
    out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));
    write_pod<std::uint64_t>(out, params.blocks().size());
    for (const auto& b : params.blocks()) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
        out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        write_pod<std::uint64_t>(out, b.value.rows());
        write_pod<std::uint64_t>(out, b.value.cols());
        write_doubles(out, b.value.data());
        write_doubles(out, b.adam_m.data());
        write_doubles(out, b.adam_v.data());
    }
    if (!out) throw DataError("checkpoint: write failed for " + path);
}

LoadedCheckpoint load_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot read " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    LoadedCheckpoint ck;
    ck.params.set_step(read_pod<std::uint64_t>(in));
    const auto cfg_len = read_pod<std::uint64_t>(in);
    ck.config_json.resize(cfg_len);
    in.read(ck.config_json.data(), static_cast<std::streamsize>(cfg_len));
    const auto n_blocks = read_pod<std::uint64_t>(in);
    for (std::uint64_t i = 0; i < n_blocks; ++i) {
        const auto name_len = read_pod<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rows = read_pod<std::uint64_t>(in);
        const auto cols = read_pod<std::uint64_t>(in);
        auto& b = ck.params.add(name, rows, cols);
        read_doubles(in, b.value.data());
        read_doubles(in, b.adam_m.data());
        read_doubles(in, b.adam_v.data());
        ensure_finite(b.value.data(), "checkpoint block " + name);
    }
    return ck;
}

void save_json(const std::string& path, const ParamSet& params, const std::string& config_json) {
    nlohmann::json doc;
    doc["step"] = params.step();
    doc["config"] = config_json.empty() ? nlohmann::json() : nlohmann::json::parse(config_json);
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : params.blocks()) {
        nlohmann::json jb;
        jb["name"] = b.name;
        jb["rows"] = b.value.rows();
        jb["cols"] = b.value.cols();
        jb["value"] = b.value.data();
        jb["adam_m"] = b.adam_m.data();
        jb["adam_v"] = b.adam_v.data();
        blocks.push_back(std::move(jb));
    }
    doc["blocks"] = std::move(blocks);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot write " + path);
    out << doc.dump(2) << "\n";
}

LoadedCheckpoint load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("checkpoint: cannot read " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint: invalid JSON in " + path + ": " + e.what());
    }
    LoadedCheckpoint ck;
    ck.params.set_step(doc.at("step").get<std::uint64_t>());
    if (!doc.at("config").is_null()) ck.config_json = doc.at("config").dump();
    for (const auto& jb : doc.at("blocks")) {
        auto& b = ck.params.add(jb.at("name").get<std::string>(),
                                jb.at("rows").get<std::size_t>(),
                                jb.at("cols").get<std::size_t>());
        b.value.data() = jb.at("value").get<Vec>();
        b.adam_m.data() = jb.at("adam_m").get<Vec>();
        b.adam_v.data() = jb.at("adam_v").get<Vec>();
        if (b.value.size() != b.value.rows() * b.value.cols() ||
            b.adam_m.data().size() != b.value.size() || b.adam_v.data().size() != b.value.size())
            throw DataError("checkpoint: block " + b.name + " has inconsistent shapes");
        ensure_finite(b.value.data(), "checkpoint block " + b.name);
    }
    return ck;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& config_json) {
    if (has_suffix(path, ".json"))
        save_json(path, params, config_json);
    else
        save_binary(path, params, config_json);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    return has_suffix(path, ".json") ? load_json(path) : load_binary(path);
}

}  // namespace flare
