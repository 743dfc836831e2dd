#include "degan/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace degan {

namespace {

constexpr char kMagic[8] = {'D', 'E', 'G', 'A', 'N', 'C', 'K', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const std::uint64_t n = read_u64(is);
    if (n > (1ull << 30)) throw std::runtime_error("checkpoint: implausible string length");
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return s;
}

}  // namespace

void Checkpoint::add_tensor(const std::string& name, const Tensor& t) {
    tensors.emplace_back(name, t);
}

const Tensor* Checkpoint::find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
    os.write(kMagic, 8);
    write_u64(os, ckpt.config.size());
    for (const auto& [k, v] : ckpt.config) {
        write_string(os, k);
        write_string(os, v);
    }
    write_u64(os, ckpt.counters.size());
    for (const auto& [k, v] : ckpt.counters) {
        write_string(os, k);
        write_u64(os, static_cast<std::uint64_t>(v));
    }
    write_u64(os, ckpt.tensors.size());
    for (const auto& [name, t] : ckpt.tensors) {
        write_string(os, name);
        write_u64(os, static_cast<std::uint64_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) write_u64(os, static_cast<std::uint64_t>(t.dim(i)));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(sizeof(double) * t.numel()));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot read " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("checkpoint: bad magic or unsupported version in " + path);

    Checkpoint ckpt;
    const std::uint64_t n_cfg = read_u64(is);
    for (std::uint64_t i = 0; i < n_cfg; ++i) {
        std::string k = read_string(is);
        ckpt.config[k] = read_string(is);
    }
    const std::uint64_t n_cnt = read_u64(is);
    for (std::uint64_t i = 0; i < n_cnt; ++i) {
        std::string k = read_string(is);
        ckpt.counters[k] = static_cast<long>(read_u64(is));
    }
    const std::uint64_t n_tensors = read_u64(is);
    for (std::uint64_t i = 0; i < n_tensors; ++i) {
        std::string name = read_string(is);
        const std::uint64_t ndim = read_u64(is);
        if (ndim > 8) throw std::runtime_error("checkpoint: implausible tensor rank");
        std::vector<long> shape(ndim);
        for (auto& d : shape) d = static_cast<long>(read_u64(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * t.numel()));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor data in " + path);
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

void checkpoint_store(Checkpoint& ckpt, const std::vector<ParamTensor*>& tensors) {
    for (const ParamTensor* p : tensors) ckpt.add_tensor(p->name, p->value);
}

void checkpoint_load_into(const Checkpoint& ckpt, const std::vector<ParamTensor*>& tensors) {
    for (ParamTensor* p : tensors) {
        const Tensor* stored = ckpt.find_tensor(p->name);
        if (!stored) throw std::runtime_error("checkpoint: missing tensor " + p->name);
        if (!stored->same_shape(p->value))
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name + ": stored " +
                                     stored->shape_str() + " vs model " + p->value.shape_str());
        p->value = *stored;
    }
}

void checkpoint_store_adam(Checkpoint& ckpt, Adam& opt, const std::string& tag) {
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
        ckpt.add_tensor("opt." + tag + ".m#" + params[i]->name, opt.moment1()[i]);
        ckpt.add_tensor("opt." + tag + ".v#" + params[i]->name, opt.moment2()[i]);
    }
    ckpt.counters["opt." + tag + ".steps"] = opt.steps_taken();
}

void checkpoint_load_adam(const Checkpoint& ckpt, Adam& opt, const std::string& tag) {
    const auto& params = opt.params();
    for (size_t i = 0; i < params.size(); ++i) {
        const Tensor* m = ckpt.find_tensor("opt." + tag + ".m#" + params[i]->name);
        const Tensor* v = ckpt.find_tensor("opt." + tag + ".v#" + params[i]->name);
        if (!m || !v)
            throw std::runtime_error("checkpoint: missing optimizer state for " + params[i]->name);
        if (!m->same_shape(opt.moment1()[i]) || !v->same_shape(opt.moment2()[i]))
            throw std::runtime_error("checkpoint: optimizer state shape mismatch for " + params[i]->name);
        opt.moment1()[i] = *m;
        opt.moment2()[i] = *v;
    }
    const auto it = ckpt.counters.find("opt." + tag + ".steps");
    if (it == ckpt.counters.end())
        throw std::runtime_error("checkpoint: missing optimizer step counter for tag " + tag);
    opt.set_steps_taken(it->second);
}

void require_config_match(const std::map<std::string, std::string>& stored,
                          const std::map<std::string, std::string>& current) {
    for (const auto& [k, v] : stored) {
        const auto it = current.find(k);
        if (it == current.end())
            throw std::runtime_error("config mismatch: checkpoint key '" + k +
                                     "' is absent from the current configuration");
        if (it->second != v)
            throw std::runtime_error("config mismatch: key '" + k + "' was '" + v +
                                     "', current run has '" + it->second + "'");
    }
    for (const auto& [k, v] : current)
        if (!stored.count(k))
            throw std::runtime_error("config mismatch: current key '" + k +
                                     "' is absent from the checkpoint snapshot");
}

}  // namespace degan
