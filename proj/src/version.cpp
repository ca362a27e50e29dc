#include "ttp/version.hpp"

#ifndef TTP_VERSION
#define TTP_VERSION "0.0.0"
#endif
#ifndef TTP_GIT_REV
#define TTP_GIT_REV "unknown"
#endif

namespace ttp {

std::string build_fingerprint() { return std::string("ttp ") + TTP_VERSION + " (" + TTP_GIT_REV + ")"; }

}  // namespace ttp
