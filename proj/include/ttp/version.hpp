#pragma once

#include <string>

namespace ttp {

// "ttp <version> (<git revision>)", embedded in every report.
std::string build_fingerprint();

}  // namespace ttp
