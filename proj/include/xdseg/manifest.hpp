#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace xdseg {

enum class Domain { source, target };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct FrameRecord {
    std::string patient_id;
    std::string video_id;
    std::uint32_t frame_index = 0;
    Domain domain = Domain::source;
    std::string image_path;               // relative to the manifest directory
    std::optional<std::string> mask_path;
};

// Frame inventory plus a patient-level split assignment. All frames of a
// video follow their patient's split.
struct Manifest {
    std::vector<FrameRecord> records;
    std::map<std::string, std::string> split_assignment;  // patient_id -> split name
    std::string root;                                     // directory of the manifest file

    std::string resolve(const std::string& rel) const;
    std::optional<std::string> split_of(const FrameRecord& r) const;
    std::vector<const FrameRecord*> frames(const std::string& split, Domain domain) const;
    std::vector<std::string> patient_ids() const;  // sorted unique

    // Throws DataError when a structural invariant is broken.
    void validate() const;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const Manifest& m);

// Largest-remainder apportionment of patients over the named splits, then a
// seeded shuffle decides which patients land where. Deterministic in
// (patient set, fractions, seed); record order does not matter.
Manifest patient_split(const Manifest& m, const std::vector<std::pair<std::string, double>>& fractions,
                       std::uint64_t seed);

}  // namespace xdseg
