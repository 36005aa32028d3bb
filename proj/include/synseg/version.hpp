#ifndef SYNSEG_VERSION_HPP
#define SYNSEG_VERSION_HPP

namespace synseg {

inline const char* tool_version() { return "0.1.0"; }

}  // namespace synseg

#endif
