#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "xdseg/model.hpp"

namespace xdseg {

// Single-file checkpoint archive:
//   "XDCKPT1\n" | u32 metadata length | metadata JSON | tensor data | u64 digest
// Tensor data is the concatenation of each entry's float32 values in metadata
// order, little-endian. The digest is FNV-1a over every preceding byte.

struct CheckpointMeta {
    std::string stage;  // pretrain_mim | pretrain_contrastive | finetune | baseline
    std::string config_digest;
    std::uint64_t rng_seed = 0;
    std::int64_t epoch = -1;
};

struct CheckpointEntry {
    std::string name;
    ParamGroup group = ParamGroup::embedding;
    std::vector<std::size_t> shape;
    std::vector<float> data;
};

struct Checkpoint {
    CheckpointMeta meta;
    std::vector<CheckpointEntry> entries;

    const CheckpointEntry* find(const std::string& name) const;
};

Checkpoint snapshot(SegModel& model, const CheckpointMeta& meta);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
// Corrupt metadata reports the byte offset; a bad trailing digest or a
// truncated file raises an integrity error without returning a partial model.
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Per-group content digests (name + raw values, registry order), hex-encoded.
std::map<ParamGroup, std::string> group_digests(SegModel& model);
std::map<ParamGroup, std::string> group_digests(const Checkpoint& c);

struct TransferReport {
    struct GroupInfo {
        ParamGroup group;
        bool transferred = false;  // copied from the checkpoint vs freshly drawn
        std::size_t tensor_count = 0;
        std::size_t parameter_count = 0;
        std::string digest;  // model digest after the transfer
    };
    std::vector<GroupInfo> groups;
};

// Copy the requested groups out of the checkpoint into the model and redraw
// every other group from the init distribution under reinit_seed. A missing
// tensor or a shape mismatch fails before anything is written to the model.
TransferReport transfer_weights(SegModel& model, const Checkpoint& ckpt,
                                const std::set<ParamGroup>& groups, std::uint64_t reinit_seed);

}  // namespace xdseg
