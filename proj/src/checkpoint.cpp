#include "xdseg/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "xdseg/errors.hpp"
#include "xdseg/rng.hpp"

namespace xdseg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'X', 'D', 'C', 'K', 'P', 'T', '1', '\n'};

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void append(std::string& buf, const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
    for (const CheckpointEntry& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

Checkpoint snapshot(SegModel& model, const CheckpointMeta& meta) {
    Checkpoint c;
    c.meta = meta;
    if (c.meta.config_digest.empty()) c.meta.config_digest = model.config().digest();
    for (const ParamRef& r : model.params()) {
        CheckpointEntry e;
        e.name = r.name;
        e.group = r.group;
        e.shape = r.value->shape();
        e.data.assign(r.value->data(), r.value->data() + r.value->size());
        c.entries.push_back(std::move(e));
    }
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    nlohmann::json meta{{"stage", c.meta.stage},
                        {"config_digest", c.meta.config_digest},
                        {"rng_seed", c.meta.rng_seed},
                        {"epoch", c.meta.epoch}};
    nlohmann::json entries = nlohmann::json::array();
    for (const CheckpointEntry& e : c.entries)
        entries.push_back({{"name", e.name}, {"group", to_string(e.group)}, {"shape", e.shape}});
    meta["entries"] = std::move(entries);
    const std::string meta_str = meta.dump();

    std::string buf;
    append(buf, kMagic, sizeof kMagic);
    const std::uint32_t len = static_cast<std::uint32_t>(meta_str.size());
    append(buf, &len, sizeof len);
    buf += meta_str;
    for (const CheckpointEntry& e : c.entries)
        append(buf, e.data.data(), e.data.size() * sizeof(float));
    const std::uint64_t digest = fnv1a64(buf.data(), buf.size());
    append(buf, &digest, sizeof digest);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("checkpoint: short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t))
        throw IntegrityError("checkpoint: " + path.string() + " is truncated (" +
                             std::to_string(buf.size()) + " bytes)");
    if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
        throw IntegrityError("checkpoint: bad magic at offset 0 in " + path.string());

    const std::size_t payload = buf.size() - sizeof(std::uint64_t);
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + payload, sizeof stored);
    if (fnv1a64(buf.data(), payload) != stored)
        throw IntegrityError("checkpoint: digest mismatch in " + path.string());

    std::size_t off = sizeof kMagic;
    std::uint32_t meta_len = 0;
    std::memcpy(&meta_len, buf.data() + off, sizeof meta_len);
    off += sizeof meta_len;
    if (off + meta_len > payload)
        throw IntegrityError("checkpoint: metadata overruns file at offset " +
                             std::to_string(off) + " in " + path.string());

    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(buf.substr(off, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError("checkpoint: metadata parse error at offset " + std::to_string(off) +
                             ": " + e.what());
    }
    off += meta_len;

    Checkpoint c;
    try {
        c.meta.stage = meta.at("stage").get<std::string>();
        c.meta.config_digest = meta.at("config_digest").get<std::string>();
        c.meta.rng_seed = meta.at("rng_seed").get<std::uint64_t>();
        c.meta.epoch = meta.at("epoch").get<std::int64_t>();
        for (const auto& je : meta.at("entries")) {
            CheckpointEntry e;
            e.name = je.at("name").get<std::string>();
            e.group = param_group_from_string(je.at("group").get<std::string>());
            e.shape = je.at("shape").get<std::vector<std::size_t>>();
            std::size_t n = 1;
            for (std::size_t d : e.shape) n *= d;
            if (e.shape.empty()) n = 0;
            if (off + n * sizeof(float) > payload)
                throw IntegrityError("checkpoint: tensor '" + e.name +
                                     "' overruns file at offset " + std::to_string(off));
            e.data.resize(n);
            std::memcpy(e.data.data(), buf.data() + off, n * sizeof(float));
            off += n * sizeof(float);
            c.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IntegrityError(std::string("checkpoint: malformed metadata: ") + e.what());
    }
    if (off != payload)
        throw IntegrityError("checkpoint: " + std::to_string(payload - off) +
                             " unaccounted bytes after tensors");
    return c;
}

std::map<ParamGroup, std::string> group_digests(SegModel& model) {
    std::map<ParamGroup, std::uint64_t> acc;
    for (ParamGroup g : kAllGroups) acc[g] = kFnvOffset;
    for (const ParamRef& r : model.params()) {
        std::uint64_t& h = acc[r.group];
        h = fnv1a64(r.name.data(), r.name.size(), h);
        h = fnv1a64(r.value->data(), r.value->size() * sizeof(float), h);
    }
    std::map<ParamGroup, std::string> out;
    for (const auto& [g, h] : acc) out[g] = hex64(h);
    return out;
}

std::map<ParamGroup, std::string> group_digests(const Checkpoint& c) {
    std::map<ParamGroup, std::uint64_t> acc;
    for (ParamGroup g : kAllGroups) acc[g] = kFnvOffset;
    for (const CheckpointEntry& e : c.entries) {
        std::uint64_t& h = acc[e.group];
        h = fnv1a64(e.name.data(), e.name.size(), h);
        h = fnv1a64(e.data.data(), e.data.size() * sizeof(float), h);
    }
    std::map<ParamGroup, std::string> out;
    for (const auto& [g, h] : acc) out[g] = hex64(h);
    return out;
}

TransferReport transfer_weights(SegModel& model, const Checkpoint& ckpt,
                                const std::set<ParamGroup>& groups, std::uint64_t reinit_seed) {
    // Validate every requested tensor before touching the model.
    for (const ParamRef& r : model.params()) {
        if (!groups.count(r.group)) continue;
        const CheckpointEntry* e = ckpt.find(r.name);
        if (!e)
            throw InvalidInput("transfer: checkpoint lacks tensor '" + r.name + "'");
        if (e->shape != r.value->shape())
            throw InvalidInput("transfer: shape mismatch for tensor '" + r.name + "' (model " +
                               r.value->shape_str() + ", checkpoint has " +
                               Tensor(e->shape).shape_str() + ")");
    }

    for (const ParamRef& r : model.params()) {
        if (!groups.count(r.group)) continue;
        const CheckpointEntry* e = ckpt.find(r.name);
        std::copy(e->data.begin(), e->data.end(), r.value->data());
    }
    for (ParamGroup g : kAllGroups)
        if (!groups.count(g)) model.reinit_group(g, reinit_seed);

    const auto digests = group_digests(model);
    TransferReport report;
    for (ParamGroup g : kAllGroups) {
        TransferReport::GroupInfo info;
        info.group = g;
        info.transferred = groups.count(g) != 0;
        for (const ParamRef& r : model.params())
            if (r.group == g) {
                ++info.tensor_count;
                info.parameter_count += r.value->size();
            }
        info.digest = digests.at(g);
        report.groups.push_back(std::move(info));
    }
    return report;
}

}  // namespace xdseg
