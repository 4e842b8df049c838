#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mhla::cli {

struct VerifyCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

// The oracle-equivalence battery behind `mhla verify`. Deterministic for a
// given seed and build; `parallel` fans checks across threads but results
// come back in the fixed declaration order.
std::vector<VerifyCheck> run_verify_checks(std::uint64_t seed, bool parallel);

}  // namespace mhla::cli
