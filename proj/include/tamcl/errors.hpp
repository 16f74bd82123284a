#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tamcl {

// Misuse of an API that requires a particular lifecycle state
// (e.g. expanding the same task twice, stepping a parameter with no gradient).
class invalid_state : public std::logic_error {
public:
    explicit invalid_state(const std::string& what) : std::logic_error(what) {}
};

// Malformed on-disk data. Carries the byte offset where parsing stopped.
class format_error : public std::runtime_error {
public:
    format_error(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// A metric whose defining formula degenerates for the given inputs.
class undefined_metric : public std::runtime_error {
public:
    explicit undefined_metric(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tamcl
