#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "degan/nn.hpp"
#include "degan/tensor.hpp"

namespace degan {

/// Versioned training archive: a config snapshot, integer counters (epoch,
/// optimizer steps, ...) and named tensors, all round-tripping bit exactly.
struct Checkpoint {
    std::map<std::string, std::string> config;
    std::map<std::string, long> counters;
    std::vector<std::pair<std::string, Tensor>> tensors;

    void add_tensor(const std::string& name, const Tensor& t);
    /// nullptr when absent.
    const Tensor* find_tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
/// Throws std::runtime_error on bad magic, version or truncation.
Checkpoint load_checkpoint(const std::string& path);

/// Store parameter/buffer values under their own names.
void checkpoint_store(Checkpoint& ckpt, const std::vector<ParamTensor*>& tensors);
/// Restore by name; missing names or shape mismatches are hard errors.
void checkpoint_load_into(const Checkpoint& ckpt, const std::vector<ParamTensor*>& tensors);

/// Optimizer state under "opt.<tag>.{m,v}#<param>" plus a step counter.
void checkpoint_store_adam(Checkpoint& ckpt, Adam& opt, const std::string& tag);
void checkpoint_load_adam(const Checkpoint& ckpt, Adam& opt, const std::string& tag);

/// Hard error naming the first offending key when the stored snapshot and the
/// current configuration disagree (extra, missing or changed keys).
void require_config_match(const std::map<std::string, std::string>& stored,
                          const std::map<std::string, std::string>& current);

}  // namespace degan
