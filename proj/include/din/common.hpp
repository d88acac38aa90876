#pragma once

#include <stdexcept>
#include <string>

namespace din {

// Thrown for contract violations and I/O failures. CLI maps it to exit code 2
// (or 1 for usage problems).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool ok, const std::string& msg) {
    if (!ok) throw Error(msg);
}

}  // namespace din
