#include "flare/trajectory.hpp"

#include "flare/errors.hpp"

namespace flare {

std::string stage_to_string(int stage) {
    switch (stage) {
        case 0: return "CN";
        case 1: return "MCI";
        case 2: return "AD";
        default: throw ContractViolation("stage_to_string: stage out of range");
    }
}

int stage_from_string(const std::string& token) {
    std::size_t a = token.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) throw DataError("empty stage label");
    std::size_t b = token.find_last_not_of(" \t\r\n");
    const std::string t = token.substr(a, b - a + 1);
    if (t == "CN") return 0;
    if (t == "MCI") return 1;
    if (t == "AD") return 2;
    throw DataError("unknown stage label: \"" + token + "\"");
}

std::size_t Cohort::total_visits() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.visits.size();
    return n;
}

}  // namespace flare
