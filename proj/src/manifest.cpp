#include "xdseg/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "xdseg/errors.hpp"
#include "xdseg/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xdseg {

std::string to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
    if (s == "source") return Domain::source;
    if (s == "target") return Domain::target;
    throw DataError("unknown domain: " + s);
}

std::string Manifest::resolve(const std::string& rel) const {
    if (root.empty() || fs::path(rel).is_absolute()) return rel;
    return (fs::path(root) / rel).string();
}

std::optional<std::string> Manifest::split_of(const FrameRecord& r) const {
    auto it = split_assignment.find(r.patient_id);
    if (it == split_assignment.end()) return std::nullopt;
    return it->second;
}

std::vector<const FrameRecord*> Manifest::frames(const std::string& split, Domain domain) const {
    std::vector<const FrameRecord*> out;
    for (const auto& r : records) {
        if (r.domain != domain) continue;
        auto s = split_of(r);
        if (s && *s == split) out.push_back(&r);
    }
    return out;
}

std::vector<std::string> Manifest::patient_ids() const {
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.patient_id);
    return {ids.begin(), ids.end()};
}

void Manifest::validate() const {
    std::map<std::string, std::string> video_patient;
    std::map<std::string, std::set<std::uint32_t>> video_frames;
    for (const auto& r : records) {
        auto [it, inserted] = video_patient.emplace(r.video_id, r.patient_id);
        if (!inserted && it->second != r.patient_id)
            throw DataError("video " + r.video_id + " maps to multiple patients");
        if (!video_frames[r.video_id].insert(r.frame_index).second)
            throw DataError("duplicate frame_index " + std::to_string(r.frame_index) +
                            " in video " + r.video_id);
    }
}

Manifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("manifest parse error in " + path + ": " + e.what());
    }
    if (!j.is_array()) throw DataError("manifest must be a JSON array: " + path);

    Manifest m;
    m.root = fs::path(path).parent_path().string();
    for (const auto& e : j) {
        FrameRecord r;
        try {
            r.patient_id = e.at("patient_id").get<std::string>();
            r.video_id = e.at("video_id").get<std::string>();
            r.frame_index = e.at("frame_index").get<std::uint32_t>();
            r.domain = domain_from_string(e.at("domain").get<std::string>());
            r.image_path = e.at("image_path").get<std::string>();
            if (e.contains("mask_path") && !e.at("mask_path").is_null())
                r.mask_path = e.at("mask_path").get<std::string>();
            if (e.contains("split") && !e.at("split").is_null())
                m.split_assignment[r.patient_id] = e.at("split").get<std::string>();
        } catch (const json::exception& ex) {
            throw DataError("manifest record schema violation in " + path + ": " + ex.what());
        }
        m.records.push_back(std::move(r));
    }
    m.validate();
    return m;
}

void save_manifest(const std::string& path, const Manifest& m) {
    json arr = json::array();
    for (const auto& r : m.records) {
        json e;
        e["patient_id"] = r.patient_id;
        e["video_id"] = r.video_id;
        e["frame_index"] = r.frame_index;
        e["domain"] = to_string(r.domain);
        e["image_path"] = r.image_path;
        e["mask_path"] = r.mask_path ? json(*r.mask_path) : json(nullptr);
        auto s = m.split_of(r);
        e["split"] = s ? json(*s) : json(nullptr);
        arr.push_back(std::move(e));
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << arr.dump(2) << "\n";
}

Manifest patient_split(const Manifest& m,
                       const std::vector<std::pair<std::string, double>>& fractions,
                       std::uint64_t seed) {
    double total = 0.0;
    for (const auto& [name, f] : fractions) total += f;
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

    const auto patients = m.patient_ids();
    if (patients.size() < fractions.size())
        throw ConfigError("fewer patients (" + std::to_string(patients.size()) +
                          ") than requested splits (" + std::to_string(fractions.size()) + ")");

    // Largest-remainder apportionment; remainder ties go to the later split.
    const std::size_t p = patients.size();
    std::vector<std::size_t> counts(fractions.size());
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double exact = fractions[i].second * static_cast<double>(p);
        counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-12));
        assigned += counts[i];
        remainders.push_back({exact - std::floor(exact + 1e-12), i});
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second > b.second;
    });
    for (std::size_t k = 0; assigned < p; ++k, ++assigned) counts[remainders[k % remainders.size()].second]++;

    // Guarantee at least one patient per split by stealing from the largest.
    for (std::size_t i = 0; i < counts.size(); ++i) {
        while (counts[i] == 0) {
            auto mx = std::max_element(counts.begin(), counts.end());
            if (*mx <= 1) throw ConfigError("cannot give every split at least one patient");
            (*mx)--;
            counts[i]++;
        }
    }

    std::vector<std::string> order = patients;  // sorted; shuffle decides membership
    Rng rng(derive_seed(seed, "patient_split"));
    rng.shuffle(order);

    Manifest out = m;
    out.split_assignment.clear();
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i)
        for (std::size_t k = 0; k < counts[i]; ++k) out.split_assignment[order[cursor++]] = fractions[i].first;
    return out;
}

}  // namespace xdseg
