#pragma once

#include <mutex>
#include <set>
#include <string>
#include <vector>

namespace xdseg::audit {

// Process-wide record of every dataset file opened for reading. Training
// runners snapshot it per stage so data-isolation contracts are assertable.
void record_read(const std::string& path);
void reset();
std::vector<std::string> snapshot();  // sorted, unique

// RAII: reset on entry, snapshot on demand.
class Scope {
  public:
    Scope() { reset(); }
    std::vector<std::string> paths() const { return snapshot(); }
};

}  // namespace xdseg::audit
