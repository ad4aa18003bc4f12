#include "xdseg/audit.hpp"

namespace xdseg::audit {

namespace {
std::mutex g_mutex;
std::set<std::string> g_paths;
}  // namespace

void record_read(const std::string& path) {
    std::lock_guard<std::mutex> lock(g_mutex);
    g_paths.insert(path);
}

void reset() {
    std::lock_guard<std::mutex> lock(g_mutex);
    g_paths.clear();
}

std::vector<std::string> snapshot() {
    std::lock_guard<std::mutex> lock(g_mutex);
    return {g_paths.begin(), g_paths.end()};
}

}  // namespace xdseg::audit
